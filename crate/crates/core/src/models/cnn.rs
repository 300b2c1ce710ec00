use crate::datasets::PatchDataset;
use crate::error::{Error, Result};
use crate::models::arch::{init_params, ParamShape};
use crate::models::{accuracy, select_rows, ArchitectureDescriptor, ModelArchitecture, EVAL_CHUNK};
use crate::nn::{softmax, softmax_cross_entropy, Layer, ParamSet, Sequential};
use crate::optim::{train_loop, ModelCheckpoint, Objective, OptimConfig, OptimizerState, Selection};
use crate::tensor::{Scalar, Tensor};

/// Lip and non-lip.
pub const PATCH_CLASSES: usize = 2;

const PREFIX: &str = "cnn";
const HEAD: &str = "cnn.head";

/// Patch classifier: conv stack → flatten → dense(feature_dim) → ReLU →
/// dense(2) → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnClassifier {
    pub desc: ArchitectureDescriptor,
    /// Everything up to the feature activations.
    pub features: Sequential,
    /// The removable dense(2) head.
    pub head: Sequential,
}

pub fn build_cnn_classifier(desc: &ArchitectureDescriptor) -> Result<CnnClassifier> {
    desc.validate()?;
    Ok(CnnClassifier {
        desc: desc.clone(),
        features: Sequential::new(desc.feature_layers(PREFIX, true)?),
        head: Sequential::new(vec![Layer::Dense { name: HEAD.into() }]),
    })
}

impl CnnClassifier {
    fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let mut shapes = self.desc.feature_params(PREFIX)?;
        shapes.push(ParamShape::dense(HEAD.into(), self.desc.feature_dim, PATCH_CLASSES));
        Ok(shapes)
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet<f32>> {
        init_params(&self.param_shapes()?, seed)
    }

    /// One line per parameterized layer: name, weight shape, parameter count.
    pub fn summary(&self) -> Result<Vec<String>> {
        let shapes = self.param_shapes()?;
        let mut lines: Vec<String> = shapes
            .iter()
            .map(|s| {
                let n = s.weight.iter().product::<usize>() + s.bias_len;
                format!("{}: weight {:?}, {n} parameters", s.name, s.weight)
            })
            .collect();
        let total: usize = shapes
            .iter()
            .map(|s| s.weight.iter().product::<usize>() + s.bias_len)
            .sum();
        lines.push(format!("total: {total} parameters"));
        Ok(lines)
    }

    /// Feature activations `[N, feature_dim]` for patches `[N,1,H,W]`.
    pub fn extract<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        self.features.infer(params, x)
    }

    /// Class probabilities `[N, 2]`.
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        let feats = self.features.infer(params, x)?;
        softmax(&self.head.infer(params, feats)?)
    }

    /// Mean cross-entropy, parameter gradients and input gradient.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        x: Tensor<T>,
        labels: &[usize],
    ) -> Result<(T, ParamSet<T>, Tensor<T>)> {
        let (feats, feat_cache) = self.features.forward(params, x)?;
        let (logits, head_cache) = self.head.forward(params, feats)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
        let (grad_feats, mut grads) = self.head.backward(head_cache, grad_logits)?;
        let (grad_x, feat_grads) = self.features.backward(feat_cache, grad_feats)?;
        grads.merge(feat_grads)?;
        Ok((loss, grads, grad_x))
    }

    /// Accuracy over a patch set, evaluated in chunks.
    pub fn accuracy(&self, params: &ParamSet<f32>, data: &PatchDataset) -> Result<f64> {
        let n = data.len();
        if n == 0 {
            return Err(Error::Empty("patch set"));
        }
        let mut hits = 0.0;
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let probs = self.predict(params, select_rows(&data.patches, &idx)?)?;
            hits += accuracy(&probs, &data.labels[start..start + idx.len()]) * idx.len() as f64;
        }
        Ok(hits / n as f64)
    }
}

/// A trained classifier reduced to its feature layers.
#[derive(Debug, Clone)]
pub struct CnnFeatures {
    pub model: CnnClassifier,
    pub params: ParamSet<f32>,
}

impl CnnFeatures {
    /// Drops the removable head. Errors if a feature-layer tensor is missing.
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let desc = match ModelArchitecture::from_json(&ckpt.architecture)? {
            ModelArchitecture::PatchCnn { descriptor } => descriptor,
            other => {
                return Err(Error::Architecture(format!(
                    "expected a patch CNN checkpoint, found {}",
                    kind_name(&other)
                )))
            }
        };
        let model = build_cnn_classifier(&desc)?;
        let params = take_params(&ckpt.params, &model.features.param_names())?;
        Ok(CnnFeatures { model, params })
    }

    pub fn extract(&self, frames: Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.extract(&self.params, frames)
    }
}

pub(crate) fn kind_name(arch: &ModelArchitecture) -> &'static str {
    match arch {
        ModelArchitecture::PatchCnn { .. } => "patch CNN",
        ModelArchitecture::Cae { .. } => "autoencoder",
        ModelArchitecture::Lstm { .. } => "LSTM classifier",
    }
}

/// Exactly `names` from `params`, or `MissingParam` for the first absent one.
pub(crate) fn take_params(params: &ParamSet<f32>, names: &[String]) -> Result<ParamSet<f32>> {
    names
        .iter()
        .map(|n| {
            params
                .get(n)
                .map(|t| (n.clone(), t.clone()))
                .map_err(|_| Error::MissingParam(n.clone()))
        })
        .collect()
}

struct PatchObjective<'a> {
    model: &'a CnnClassifier,
    train: &'a PatchDataset,
    val: &'a PatchDataset,
}

impl Objective for PatchObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn loss_and_grad(&self, params: &ParamSet<f32>, batch: &[usize]) -> Result<(f64, ParamSet<f32>)> {
        let x = select_rows(&self.train.patches, batch)?;
        let labels: Vec<usize> = batch.iter().map(|&i| self.train.labels[i]).collect();
        let (loss, grads, _) = self.model.loss_and_grad(params, x, &labels)?;
        Ok((loss as f64, grads))
    }

    fn validate(&self, params: &ParamSet<f32>) -> Result<f64> {
        let acc = self.model.accuracy(params, self.val)?;
        log::info!("patch classifier val accuracy {acc:.4}");
        Ok(acc)
    }

    fn selection(&self) -> Selection {
        Selection::Maximize
    }
}

/// Trains on lip / non-lip patches, selecting on validation accuracy. The
/// returned checkpoint marks the dense(2) head as removable.
pub fn train_patch_classifier(
    model: &CnnClassifier,
    train: &PatchDataset,
    val: &PatchDataset,
    config: &OptimConfig,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let [_, h, w] = model.desc.frame_dims();
    if train.patches.dims()[2..] != [h, w] {
        return Err(Error::ProfileMismatch {
            expected: format!("{w}x{h} patches"),
            found: format!("{:?}", train.patches.dims()),
        });
    }
    let params = model.init_params(seed)?;
    let state = OptimizerState::new(config.clone(), &params);
    let objective = PatchObjective { model, train, val };
    let arch = ModelArchitecture::PatchCnn {
        descriptor: model.desc.clone(),
    };
    let mut ckpt = train_loop(&objective, params, arch.to_json()?, state, seed)?;
    ckpt.metadata.removable = vec![format!("{HEAD}.*")];
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Profile;

    #[test]
    fn zero_patch_gives_a_distribution() {
        let desc = ArchitectureDescriptor::tiny(Profile::desk(), 2);
        let model = build_cnn_classifier(&desc).unwrap();
        let params = model.init_params(1).unwrap();
        let probs = model.predict(&params, Tensor::zeros(&[1, 1, 24, 36]).unwrap()).unwrap();
        assert_eq!(probs.dims(), &[1, 2]);
        assert!((probs.data().iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn paper_preset_has_five_layers_of_increasing_width() {
        let desc = ArchitectureDescriptor::paper(Profile::bbc(), 9);
        let model = build_cnn_classifier(&desc).unwrap();
        let convs: Vec<_> = model
            .features
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv2d { .. }))
            .collect();
        assert_eq!(convs.len(), 5);
        let summary = model.summary().unwrap();
        assert!(summary[0].starts_with("cnn.conv1: weight [64, 1, 3, 3]"));
    }
}
