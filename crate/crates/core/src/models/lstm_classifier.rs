use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::arch::{init_params, ParamShape};
use crate::models::cnn::kind_name;
use crate::models::{accuracy, select_rows, ArchitectureDescriptor, FeatureDataset, ModelArchitecture, EVAL_CHUNK};
use crate::nn::lstm::GATE_FORGET;
use crate::nn::{
    dense_backward, dense_forward, lstm_sequence, lstm_sequence_backward, lstm_sequence_states,
    lstm_sequence_states_backward, softmax, softmax_cross_entropy, xavier_init, ParamSet,
};
use crate::optim::{train_loop, ModelCheckpoint, Objective, OptimConfig, OptimizerState, Selection};
use crate::tensor::{Scalar, Tensor};

const HEAD: &str = "lstm.head";
const NORM_MEAN: &str = "norm.mean";
const NORM_INV_STD: &str = "norm.inv_std";

/// Word classifier over feature sequences `[N,T,d]`: stacked LSTM layers, the
/// last hidden state of the top layer, dense(classes), softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmClassifier {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
    /// Sequence length the classifier was trained on.
    pub frames: usize,
}

impl LstmClassifier {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, frames: usize) -> Self {
        LstmClassifier {
            input_dim,
            hidden,
            layers: 1,
            classes,
            frames,
        }
    }

    /// Reads feature size, hidden size, depth, vocabulary and `T` from `desc`.
    pub fn from_descriptor(desc: &ArchitectureDescriptor) -> Self {
        LstmClassifier {
            input_dim: desc.feature_dim,
            hidden: desc.lstm_hidden,
            layers: desc.lstm_layers,
            classes: desc.vocab_size,
            frames: desc.profile.frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 || self.frames == 0 || self.classes < 2 {
            return Err(Error::Architecture(format!(
                "LSTM classifier needs positive sizes and at least two classes, got {self:?}"
            )));
        }
        Ok(())
    }

    fn layer_name(layer: usize) -> String {
        format!("lstm.l{layer}")
    }

    /// Xavier weights, zero biases except the forget gate, which starts at 1.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet<f32>> {
        self.validate()?;
        let h = self.hidden;
        let mut params = init_params(&[ParamShape::dense(HEAD.into(), h, self.classes)], seed)?;
        for layer in 1..=self.layers {
            let d = if layer == 1 { self.input_dim } else { h };
            let name = Self::layer_name(layer);
            let w = xavier_init(
                d + h,
                4 * h,
                &[d + h, 4 * h],
                crate::nn::mix_seed(seed, 0x6c73_746d + layer as u64),
            )?;
            let mut b = Tensor::zeros(&[4 * h])?;
            b.data_mut()[GATE_FORGET * h..(GATE_FORGET + 1) * h].fill(1.0);
            params.insert(format!("{name}.w"), w);
            params.insert(format!("{name}.b"), b);
        }
        Ok(params)
    }

    fn check_input<T: Scalar>(&self, features: &Tensor<T>) -> Result<()> {
        let d = features.dims();
        if d.len() != 3 || d[1] != self.frames || d[2] != self.input_dim {
            return Err(Error::ProfileMismatch {
                expected: format!("[N, {}, {}] feature sequences", self.frames, self.input_dim),
                found: format!("{d:?}"),
            });
        }
        Ok(())
    }

    /// Class scores `[N, classes]` before the softmax.
    pub fn logits<T: Scalar>(&self, params: &ParamSet<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(features)?;
        let mut x = features.clone();
        for layer in 1..self.layers {
            let name = Self::layer_name(layer);
            x = lstm_sequence_states(&x, params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?)?.0;
        }
        let name = Self::layer_name(self.layers);
        let (h_last, _) = lstm_sequence(&x, params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?)?;
        Ok(dense_forward(&h_last, params.get(&format!("{HEAD}.w"))?, params.get(&format!("{HEAD}.b"))?)?.0)
    }

    pub fn probabilities<T: Scalar>(&self, params: &ParamSet<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.logits(params, features)?)
    }

    /// Mean cross-entropy, parameter gradients and feature gradient.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        features: &Tensor<T>,
        labels: &[usize],
    ) -> Result<(T, ParamSet<T>, Tensor<T>)> {
        self.check_input(features)?;
        let mut x = features.clone();
        let mut lower = Vec::with_capacity(self.layers - 1);
        for layer in 1..self.layers {
            let name = Self::layer_name(layer);
            let (states, cache) =
                lstm_sequence_states(&x, params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?)?;
            lower.push(cache);
            x = states;
        }
        let top = Self::layer_name(self.layers);
        let (h_last, top_cache) =
            lstm_sequence(&x, params.get(&format!("{top}.w"))?, params.get(&format!("{top}.b"))?)?;
        let (logits, head_cache) =
            dense_forward(&h_last, params.get(&format!("{HEAD}.w"))?, params.get(&format!("{HEAD}.b"))?)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;

        let mut grads = ParamSet::new();
        let (grad_h, gw, gb) = dense_backward(&grad_logits, &head_cache)?;
        grads.insert(format!("{HEAD}.w"), gw);
        grads.insert(format!("{HEAD}.b"), gb);
        let (mut grad_x, gw, gb) = lstm_sequence_backward(&grad_h, &top_cache)?;
        grads.insert(format!("{top}.w"), gw);
        grads.insert(format!("{top}.b"), gb);
        for (i, cache) in lower.iter().enumerate().rev() {
            let name = Self::layer_name(i + 1);
            let (g, gw, gb) = lstm_sequence_states_backward(&grad_x, cache)?;
            grads.insert(format!("{name}.w"), gw);
            grads.insert(format!("{name}.b"), gb);
            grad_x = g;
        }
        Ok((loss, grads, grad_x))
    }
}

/// Per-dimension standardization fitted on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f32>,
    pub inv_std: Vec<f32>,
}

impl FeatureNorm {
    /// Mean and inverse standard deviation of every feature over all frames of
    /// `features: [N,T,d]`. Near-constant features get unit scale.
    pub fn fit(features: &Tensor<f32>) -> Result<Self> {
        let d = *features.dims().last().ok_or(Error::Empty("features"))?;
        let rows = features.len() / d.max(1);
        if rows == 0 {
            return Err(Error::Empty("features"));
        }
        let mut sum = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for row in features.data().chunks_exact(d) {
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v as f64;
                sq[j] += v as f64 * v as f64;
            }
        }
        let mut mean = Vec::with_capacity(d);
        let mut inv_std = Vec::with_capacity(d);
        for j in 0..d {
            let m = sum[j] / rows as f64;
            let var = (sq[j] / rows as f64 - m * m).max(0.0);
            mean.push(m as f32);
            inv_std.push(if var.sqrt() < 1e-6 { 1.0 } else { (1.0 / var.sqrt()) as f32 });
        }
        Ok(FeatureNorm { mean, inv_std })
    }

    pub fn apply(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let d = self.mean.len();
        if features.dims().last() != Some(&d) {
            return Err(Error::ShapeMismatch {
                op: "feature normalization",
                left: features.dims().to_vec(),
                right: vec![d],
            });
        }
        let mut out = features.clone();
        for row in out.data_mut().chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }

    fn store(&self, params: &mut ParamSet<f32>) -> Result<()> {
        let d = self.mean.len();
        params.insert(NORM_MEAN, Tensor::new(&[d], self.mean.clone())?);
        params.insert(NORM_INV_STD, Tensor::new(&[d], self.inv_std.clone())?);
        Ok(())
    }

    fn restore(params: &ParamSet<f32>) -> Option<Self> {
        Some(FeatureNorm {
            mean: params.get(NORM_MEAN).ok()?.data().to_vec(),
            inv_std: params.get(NORM_INV_STD).ok()?.data().to_vec(),
        })
    }
}

/// A trained classifier ready for inference.
#[derive(Debug, Clone)]
pub struct LstmModel {
    pub classifier: LstmClassifier,
    pub params: ParamSet<f32>,
    pub norm: Option<FeatureNorm>,
}

impl LstmModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let classifier = match ModelArchitecture::from_json(&ckpt.architecture)? {
            ModelArchitecture::Lstm { classifier } => classifier,
            other => {
                return Err(Error::Architecture(format!(
                    "expected an LSTM classifier checkpoint, found {}",
                    kind_name(&other)
                )))
            }
        };
        Ok(LstmModel {
            params: ckpt.params.filter(|n| n.starts_with("lstm.")),
            norm: FeatureNorm::restore(&ckpt.params),
            classifier,
        })
    }

    /// Word probabilities `[N, classes]` for raw (unnormalized) features.
    pub fn predict(&self, features: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = features.dims().first().copied().unwrap_or(0);
        if n == 0 {
            return Err(Error::Empty("feature batch"));
        }
        let mut out = Vec::with_capacity(n * self.classifier.classes);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let mut x = select_rows(features, &idx)?;
            if let Some(norm) = &self.norm {
                x = norm.apply(&x)?;
            }
            out.extend_from_slice(self.classifier.probabilities(&self.params, &x)?.data());
        }
        Tensor::new(&[n, self.classifier.classes], out)
    }
}

struct SequenceObjective<'a> {
    classifier: &'a LstmClassifier,
    train: &'a Tensor<f32>,
    train_labels: &'a [usize],
    val: &'a Tensor<f32>,
    val_labels: &'a [usize],
}

impl Objective for SequenceObjective<'_> {
    fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    fn loss_and_grad(&self, params: &ParamSet<f32>, batch: &[usize]) -> Result<(f64, ParamSet<f32>)> {
        let x = select_rows(self.train, batch)?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.train_labels[i]).collect();
        let (loss, grads, _) = self.classifier.loss_and_grad(params, &x, &labels)?;
        Ok((loss as f64, grads))
    }

    fn validate(&self, params: &ParamSet<f32>) -> Result<f64> {
        let n = self.val_labels.len();
        let mut hits = 0.0;
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let probs = self.classifier.logits(params, &select_rows(self.val, &idx)?)?;
            hits += accuracy(&probs, &self.val_labels[start..start + idx.len()]) * idx.len() as f64;
        }
        Ok(hits / n as f64)
    }

    fn selection(&self) -> Selection {
        Selection::Maximize
    }
}

/// Trains the word classifier on precomputed features, selecting on
/// validation accuracy. Features are standardized with statistics of the
/// training split, which are stored in the checkpoint as `norm.*`.
pub fn train_lstm_classifier(
    classifier: &LstmClassifier,
    train: &FeatureDataset,
    val: &FeatureDataset,
    config: &OptimConfig,
    seed: u64,
) -> Result<ModelCheckpoint> {
    classifier.validate()?;
    for set in [train, val] {
        classifier.check_input(&set.features)?;
        if let Some(&label) = set.labels.iter().find(|&&l| l >= classifier.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: classifier.classes,
            });
        }
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let norm = FeatureNorm::fit(&train.features)?;
    let train_x = norm.apply(&train.features)?;
    let val_x = norm.apply(&val.features)?;
    let params = classifier.init_params(seed)?;
    let state = OptimizerState::new(config.clone(), &params);
    let objective = SequenceObjective {
        classifier,
        train: &train_x,
        train_labels: &train.labels,
        val: &val_x,
        val_labels: &val.labels,
    };
    let arch = ModelArchitecture::Lstm {
        classifier: classifier.clone(),
    };
    let mut ckpt = train_loop(&objective, params, arch.to_json()?, state, seed)?;
    norm.store(&mut ckpt.params)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forget_bias_starts_at_one() {
        let c = LstmClassifier::new(3, 4, 2, 5);
        let p = c.init_params(1).unwrap();
        let b = p.get("lstm.l1.b").unwrap().data();
        assert_eq!(&b[4..8], &[1.0; 4]);
        assert_eq!(&b[..4], &[0.0; 4]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut c = LstmClassifier::new(3, 4, 5, 6);
        c.layers = 2;
        let p = c.init_params(2).unwrap();
        let x = Tensor::from_fn(&[2, 6, 3], |i| (i as f32 * 0.37).sin()).unwrap();
        let probs = c.probabilities(&p, &x).unwrap();
        for row in probs.data().chunks(5) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_sequence_length_is_a_profile_mismatch() {
        let c = LstmClassifier::new(3, 4, 2, 6);
        let p = c.init_params(2).unwrap();
        let x = Tensor::zeros(&[1, 7, 3]).unwrap();
        assert!(matches!(c.logits(&p, &x), Err(Error::ProfileMismatch { .. })));
    }

    #[test]
    fn norm_standardizes_columns() {
        let x = Tensor::new(&[1, 4, 2], vec![1.0, 5.0, 3.0, 5.0, 5.0, 5.0, 7.0, 5.0]).unwrap();
        let norm = FeatureNorm::fit(&x).unwrap();
        assert_eq!(norm.mean, vec![4.0, 5.0]);
        assert_eq!(norm.inv_std[1], 1.0);
        let y = norm.apply(&x).unwrap();
        let col: Vec<f32> = y.data().chunks(2).map(|r| r[0]).collect();
        let mean: f32 = col.iter().sum::<f32>() / 4.0;
        let var: f32 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-5);
    }
}
