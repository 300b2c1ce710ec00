//! Dataset profiles, the synthetic lip-video generator, manifests, split
//! protocols and the lip / non-lip patch dataset.

mod ingest;
mod manifest;
mod patches;
mod profile;
mod splits;
mod synth;

pub use ingest::manifest_from_frame_dirs;
pub use manifest::{load_batch, Labeled, Manifest, ManifestHeader, ManifestRecord, Stage};
pub use patches::{build_patch_dataset, PatchDataset, LIP, NEGATIVE_IOU, NON_LIP, POSITIVE_IOU};
pub use profile::Profile;
pub use splits::{
    largest_remainder, split_held_out_speaker, split_per_class_counts, split_per_speaker_fraction,
    split_speaker_dependent, SplitIndices, SplitSpec,
};
pub use synth::{
    synthesize_corpus, synthesize_word_video, SpeakerStyle, SynthCorpusSpec, SynthVocabulary, SyntheticVideo,
};

use crate::tensor::Tensor;

/// One fixed-length video with its word label and speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// `[T, 1, H, W]`, pixels in `[0, 1]`.
    pub frames: Tensor<f32>,
    pub label: usize,
    pub speaker: u32,
    /// Frame count before black-frame padding.
    pub source_len: usize,
}
