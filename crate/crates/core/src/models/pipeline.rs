use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{PatchDataset, VideoSample};
use crate::error::{Error, Result};
use crate::models::{
    build_cae, build_cnn_classifier, train_cae, train_lstm_classifier, train_patch_classifier, ArchitectureDescriptor,
    FeatureDataset, FeatureExtractor, LstmClassifier,
};
use crate::nn::mix_seed;
use crate::optim::{ModelCheckpoint, OptimConfig};
use crate::tensor::Tensor;

/// Settings of both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    pub descriptor: ArchitectureDescriptor,
    /// Optimizer of the extractor phase (autoencoder or patch classifier).
    pub extractor: OptimConfig,
    pub lstm: OptimConfig,
    /// Cap on autoencoder training frames, drawn from non-padding frames.
    pub max_train_frames: Option<usize>,
    pub max_val_frames: Option<usize>,
}

impl TwoPhaseConfig {
    pub fn new(descriptor: ArchitectureDescriptor) -> Self {
        TwoPhaseConfig {
            descriptor,
            extractor: OptimConfig::cae(),
            lstm: OptimConfig::lstm(),
            max_train_frames: None,
            max_val_frames: None,
        }
    }
}

/// Checkpoints of a finished two-phase run plus the features it produced.
#[derive(Debug, Clone)]
pub struct TwoPhaseModels {
    pub extractor: ModelCheckpoint,
    pub classifier: ModelCheckpoint,
    pub train_features: FeatureDataset,
    pub val_features: FeatureDataset,
}

/// Source (non-padding) frames of `samples` as `[N,1,H,W]`. With a `limit`,
/// a seeded subset of that size is taken, kept in corpus order.
pub fn collect_frames(samples: &[VideoSample], limit: Option<usize>, seed: u64) -> Result<Tensor<f32>> {
    let first = samples.first().ok_or(Error::Empty("video set"))?;
    let [_, _, h, w] = [
        first.frames.dims()[0],
        first.frames.dims()[1],
        first.frames.dims()[2],
        first.frames.dims()[3],
    ];
    let mut refs: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.source_len.min(s.frames.dims()[0])).map(move |t| (i, t)))
        .collect();
    if let Some(limit) = limit.filter(|&l| l < refs.len()) {
        refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        refs.truncate(limit);
        refs.sort_unstable();
    }
    if refs.is_empty() {
        return Err(Error::Empty("source frames"));
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(refs.len() * plane);
    for (i, t) in &refs {
        data.extend_from_slice(&samples[*i].frames.data()[t * plane..(t + 1) * plane]);
    }
    Tensor::new(&[refs.len(), 1, h, w], data)
}

fn second_phase(
    extractor: ModelCheckpoint,
    train: &[VideoSample],
    val: &[VideoSample],
    config: &TwoPhaseConfig,
    seed: u64,
) -> Result<TwoPhaseModels> {
    let frozen = FeatureExtractor::from_checkpoint(&extractor)?;
    let train_features = frozen.extract_samples(train)?;
    let val_features = frozen.extract_samples(val)?;
    let classifier = LstmClassifier::from_descriptor(&config.descriptor);
    let classifier = train_lstm_classifier(&classifier, &train_features, &val_features, &config.lstm, mix_seed(seed, 2))?;
    Ok(TwoPhaseModels {
        extractor,
        classifier,
        train_features,
        val_features,
    })
}

/// Autoencoder on training frames, then the LSTM on frozen-encoder features.
pub fn train_cae_lstm(
    train: &[VideoSample],
    val: &[VideoSample],
    config: &TwoPhaseConfig,
    seed: u64,
) -> Result<TwoPhaseModels> {
    let cae = build_cae(&config.descriptor)?;
    let train_frames = collect_frames(train, config.max_train_frames, mix_seed(seed, 3))?;
    let val_frames = collect_frames(val, config.max_val_frames, mix_seed(seed, 4))?;
    log::info!(
        "autoencoder phase: {} training frames, {} validation frames",
        train_frames.dims()[0],
        val_frames.dims()[0]
    );
    let encoder = train_cae(&cae, &train_frames, &val_frames, &config.extractor, mix_seed(seed, 1))?;
    second_phase(encoder, train, val, config, seed)
}

/// Lip / non-lip patch classifier, then the LSTM on its frozen features.
pub fn train_cnn_lstm(
    patches_train: &PatchDataset,
    patches_val: &PatchDataset,
    train: &[VideoSample],
    val: &[VideoSample],
    config: &TwoPhaseConfig,
    seed: u64,
) -> Result<TwoPhaseModels> {
    let cnn = build_cnn_classifier(&config.descriptor)?;
    let ckpt = train_patch_classifier(&cnn, patches_train, patches_val, &config.extractor, mix_seed(seed, 1))?;
    second_phase(ckpt, train, val, config, seed)
}
