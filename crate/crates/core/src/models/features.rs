use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::datasets::{Manifest, ManifestRecord, Stage, VideoSample};
use crate::error::{Error, Result};
use crate::models::cnn::kind_name;
use crate::models::{argmax, select_rows, ArchitectureDescriptor, CaeEncoder, CnnFeatures, LstmModel, ModelArchitecture};
use crate::optim::{load_checkpoint_subset, ModelCheckpoint};
use crate::tensor::{read_tensor, write_tensor, Tensor};

/// Feature sequences `[N, T, d]` with their labels and speakers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
    pub speakers: Vec<u32>,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<FeatureDataset> {
        Ok(FeatureDataset {
            features: select_rows(&self.features, indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            speakers: indices.iter().map(|&i| self.speakers[i]).collect(),
        })
    }

    fn from_parts(sequences: Vec<Tensor<f32>>, labels: Vec<usize>, speakers: Vec<u32>) -> Result<Self> {
        Ok(FeatureDataset {
            features: Tensor::stack(&sequences)?,
            labels,
            speakers,
        })
    }
}

/// A frozen per-frame feature extractor.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    /// Autoencoder bottleneck.
    Cae(CaeEncoder),
    /// Penultimate activations of the patch classifier.
    Cnn(CnnFeatures),
}

impl FeatureExtractor {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        match ModelArchitecture::from_json(&ckpt.architecture)? {
            ModelArchitecture::Cae { .. } => Ok(FeatureExtractor::Cae(CaeEncoder::from_checkpoint(ckpt)?)),
            ModelArchitecture::PatchCnn { .. } => Ok(FeatureExtractor::Cnn(CnnFeatures::from_checkpoint(ckpt)?)),
            other => Err(Error::Architecture(format!(
                "a {} checkpoint is not a feature extractor",
                kind_name(&other)
            ))),
        }
    }

    /// Loads only the extractor's tensors: `enc.*` of an autoencoder, or the
    /// conv and feature layers of a patch classifier.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint_subset(path, &["enc.*", "cnn.conv*", "cnn.fc.*"])?)
    }

    pub fn descriptor(&self) -> &ArchitectureDescriptor {
        match self {
            FeatureExtractor::Cae(e) => &e.model.desc,
            FeatureExtractor::Cnn(c) => &c.model.desc,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.descriptor().feature_dim
    }

    /// Codes `[N, d]` for frames `[N,1,H,W]`; row `i` depends only on frame `i`.
    pub fn extract_frames(&self, frames: Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            FeatureExtractor::Cae(e) => e.extract(frames),
            FeatureExtractor::Cnn(c) => c.extract(frames),
        }
    }

    /// Feature sequence `[T, d]` of one video `[T,1,H,W]` of the extractor's profile.
    pub fn extract_video(&self, video: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.descriptor().profile.check_video(video.dims())?;
        self.extract_frames(video.clone())
    }

    /// Feature sequences of many videos, computed in parallel.
    pub fn extract_samples(&self, samples: &[VideoSample]) -> Result<FeatureDataset> {
        if samples.is_empty() {
            return Err(Error::Empty("video set"));
        }
        let sequences = samples
            .par_iter()
            .map(|s| self.extract_video(&s.frames))
            .collect::<Result<Vec<_>>>()?;
        FeatureDataset::from_parts(
            sequences,
            samples.iter().map(|s| s.label).collect(),
            samples.iter().map(|s| s.speaker).collect(),
        )
    }
}

/// Patch-classifier features of one video.
pub fn cnn_extract_features(ckpt: &ModelCheckpoint, video: &Tensor<f32>) -> Result<Tensor<f32>> {
    FeatureExtractor::Cnn(CnnFeatures::from_checkpoint(ckpt)?).extract_video(video)
}

/// Autoencoder bottleneck features of one video, using only `enc.*` tensors.
pub fn cae_extract_features(ckpt: &ModelCheckpoint, video: &Tensor<f32>) -> Result<Tensor<f32>> {
    FeatureExtractor::Cae(CaeEncoder::from_checkpoint(ckpt)?).extract_video(video)
}

/// `clip.ntsr` → `clip.feat`.
pub fn feature_path(path: &Path) -> PathBuf {
    path.with_extension("feat")
}

/// Writes one `.feat` tensor per video under `out_dir`, mirroring relative
/// record paths, and returns the features-stage manifest rooted at `out_dir`.
pub fn extract_manifest_features(
    manifest: &Manifest,
    extractor: &FeatureExtractor,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if manifest.header.stage != Stage::Frames {
        return Err(Error::Config(format!(
            "feature extraction needs a frames manifest, got stage {:?}",
            manifest.header.stage
        )));
    }
    if manifest.profile() != extractor.descriptor().profile {
        return Err(Error::ProfileMismatch {
            expected: extractor.descriptor().profile.to_string(),
            found: manifest.profile().to_string(),
        });
    }
    let records = manifest
        .records
        .par_iter()
        .map(|r| {
            let video: Tensor<f32> = read_tensor(manifest.resolve(r))?;
            let feats = extractor.extract_video(&video)?;
            let rel = feature_path(&manifest.relative_path(r));
            let dest = out_dir.join(&rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_tensor(&dest, &feats)?;
            Ok(ManifestRecord { path: rel, ..r.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut header = manifest.header.clone();
    header.stage = Stage::Features;
    Manifest::new(header, records, out_dir)
}

/// Reads every `.feat` sequence of a features manifest.
pub fn load_features(manifest: &Manifest) -> Result<FeatureDataset> {
    if manifest.header.stage != Stage::Features {
        return Err(Error::Config(format!(
            "expected a features manifest, got stage {:?}",
            manifest.header.stage
        )));
    }
    if manifest.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let frames = manifest.profile().frames;
    let sequences = manifest
        .records
        .iter()
        .map(|r| {
            let t: Tensor<f32> = read_tensor(manifest.resolve(r))?;
            if t.rank() != 2 || t.dims()[0] != frames {
                return Err(Error::ProfileMismatch {
                    expected: format!("[{frames}, d] features"),
                    found: format!("{:?}", t.dims()),
                });
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureDataset::from_parts(
        sequences,
        manifest.records.iter().map(|r| r.label).collect(),
        manifest.records.iter().map(|r| r.speaker).collect(),
    )
}

/// Extractor and word classifier composed into one inference pipeline.
#[derive(Debug, Clone)]
pub struct WordReader {
    pub extractor: FeatureExtractor,
    pub classifier: LstmModel,
}

impl WordReader {
    /// Errors unless the classifier consumes the extractor's output geometry.
    pub fn new(extractor: FeatureExtractor, classifier: LstmModel) -> Result<Self> {
        let desc = extractor.descriptor();
        let c = &classifier.classifier;
        if c.frames != desc.profile.frames || c.input_dim != desc.feature_dim {
            return Err(Error::ProfileMismatch {
                expected: format!("T={} d={} from the extractor", desc.profile.frames, desc.feature_dim),
                found: format!("T={} d={} in the classifier", c.frames, c.input_dim),
            });
        }
        Ok(WordReader { extractor, classifier })
    }

    pub fn from_checkpoints(extractor: &ModelCheckpoint, classifier: &ModelCheckpoint) -> Result<Self> {
        Self::new(
            FeatureExtractor::from_checkpoint(extractor)?,
            LstmModel::from_checkpoint(classifier)?,
        )
    }

    /// Word probabilities of one video `[T,1,H,W]`.
    pub fn probabilities(&self, video: &Tensor<f32>) -> Result<Vec<f32>> {
        let feats = self.extractor.extract_video(video)?;
        let [t, d] = [feats.dims()[0], feats.dims()[1]];
        Ok(self.classifier.predict(&feats.reshape(&[1, t, d])?)?.into_data())
    }

    /// Most probable word index and the full distribution.
    pub fn predict(&self, video: &Tensor<f32>) -> Result<(usize, Vec<f32>)> {
        let probs = self.probabilities(video)?;
        Ok((argmax(&probs), probs))
    }
}

/// Full inference for one preprocessed video `[T,1,H,W]`.
pub fn predict_word(
    extractor: &ModelCheckpoint,
    classifier: &ModelCheckpoint,
    video: &Tensor<f32>,
) -> Result<(usize, Vec<f32>)> {
    WordReader::from_checkpoints(extractor, classifier)?.predict(video)
}
