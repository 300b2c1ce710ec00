//! The lip / non-lip CNN, the convolutional autoencoder, the LSTM word
//! classifier, and the pipelines that train them and turn videos into
//! feature sequences.

mod arch;
mod cae;
mod cnn;
mod features;
mod lstm_classifier;
mod pipeline;

pub use arch::{ArchitectureDescriptor, ConvLayerSpec, POOL};
pub use cae::{build_cae, train_cae, Cae, CaeEncoder};
pub use cnn::{build_cnn_classifier, train_patch_classifier, CnnClassifier, CnnFeatures, PATCH_CLASSES};
pub use features::{
    cae_extract_features, cnn_extract_features, extract_manifest_features, feature_path, load_features,
    predict_word, FeatureDataset, FeatureExtractor, WordReader,
};
pub use lstm_classifier::{train_lstm_classifier, FeatureNorm, LstmClassifier, LstmModel};
pub use pipeline::{collect_frames, train_cae_lstm, train_cnn_lstm, TwoPhaseConfig, TwoPhaseModels};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// The `architecture` field of every checkpoint this crate writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelArchitecture {
    PatchCnn { descriptor: ArchitectureDescriptor },
    Cae { descriptor: ArchitectureDescriptor },
    Lstm { classifier: LstmClassifier },
}

impl ModelArchitecture {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(value.clone())
            .map_err(|e| Error::Architecture(format!("unrecognized checkpoint architecture: {e}")))
    }
}

/// Rows of `t` (along the leading axis) picked by `indices`, in order.
pub(crate) fn select_rows<T: Scalar>(t: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>> {
    let dims = t.dims();
    let inner: usize = dims[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * inner);
    for &i in indices {
        if i >= dims[0] {
            return Err(Error::AxisOutOfRange { axis: i, rank: dims[0] });
        }
        data.extend_from_slice(&t.data()[i * inner..(i + 1) * inner]);
    }
    let mut out_dims = dims.to_vec();
    out_dims[0] = indices.len();
    Tensor::new(&out_dims, data)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `[N,K]` score rows whose argmax equals the label.
pub(crate) fn accuracy<T: Scalar>(scores: &Tensor<T>, labels: &[usize]) -> f64 {
    let k = scores.dims()[1];
    let hits = scores
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Evaluation batch size for inference over datasets.
pub(crate) const EVAL_CHUNK: usize = 128;
