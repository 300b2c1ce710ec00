use std::path::Path;

use crate::error::{Error, Result};
use crate::models::arch::{init_params, ParamShape};
use crate::models::cnn::{kind_name, take_params};
use crate::models::{select_rows, ArchitectureDescriptor, ModelArchitecture, EVAL_CHUNK, POOL};
use crate::nn::{mse_loss, Layer, ParamSet, Sequential};
use crate::optim::{load_checkpoint_subset, train_loop, ModelCheckpoint, Objective, OptimConfig, OptimizerState, Selection};
use crate::tensor::{Scalar, Tensor};

const ENC: &str = "enc";

/// Convolutional autoencoder. The decoder mirrors the encoder: a dense layer
/// back to the last conv map, then per encoder layer in reverse a stride-2
/// transposed convolution where it pooled and a transposed convolution with
/// the layer's own kernel geometry. The output goes through a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Cae {
    pub desc: ArchitectureDescriptor,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

/// Checks that every layer can be undone exactly by its transposed
/// counterpart, reporting the first layer (1-based) that cannot.
fn check_invertible(desc: &ArchitectureDescriptor) -> Result<()> {
    let [_, mut h, mut w] = desc.frame_dims();
    for (i, l) in desc.conv.iter().enumerate() {
        let layer = i + 1;
        for (axis, len) in [("height", &mut h), ("width", &mut w)] {
            let padded = *len + 2 * l.pad;
            if l.stride == 0 || l.kernel == 0 || l.kernel > padded || (padded - l.kernel) % l.stride != 0 {
                return Err(Error::NonInvertible {
                    layer,
                    detail: format!(
                        "{axis} {len}: kernel {} stride {} pad {} leaves a remainder",
                        l.kernel, l.stride, l.pad
                    ),
                });
            }
            *len = (padded - l.kernel) / l.stride + 1;
            if l.pool {
                if *len < POOL || *len % POOL != 0 {
                    return Err(Error::NonInvertible {
                        layer,
                        detail: format!("{axis} {len} cannot be pooled by {POOL} and restored"),
                    });
                }
                *len /= POOL;
            }
        }
    }
    Ok(())
}

pub fn build_cae(desc: &ArchitectureDescriptor) -> Result<Cae> {
    check_invertible(desc)?;
    desc.validate()?;
    let shapes = desc.layer_shapes()?;
    let last = *shapes.last().expect("validated stack is non-empty");
    let mut dec = vec![
        Layer::Dense { name: "dec.fc".into() },
        Layer::Relu,
        Layer::Reshape { dims: last.to_vec() },
    ];
    for (i, spec) in desc.conv.iter().enumerate().rev() {
        let layer = i + 1;
        if spec.pool {
            dec.push(Layer::ConvTranspose2d {
                name: format!("dec.up{layer}"),
                stride: POOL,
                pad: 0,
            });
            dec.push(Layer::Relu);
        }
        dec.push(Layer::ConvTranspose2d {
            name: format!("dec.deconv{layer}"),
            stride: spec.stride,
            pad: spec.pad,
        });
        dec.push(if layer == 1 { Layer::Sigmoid } else { Layer::Relu });
    }
    Ok(Cae {
        desc: desc.clone(),
        encoder: Sequential::new(desc.feature_layers(ENC, false)?),
        decoder: Sequential::new(dec),
    })
}

impl Cae {
    fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let mut shapes = self.desc.feature_params(ENC)?;
        let flat = self.desc.flat_dim()?;
        shapes.push(ParamShape::dense("dec.fc".into(), self.desc.feature_dim, flat));
        for (i, spec) in self.desc.conv.iter().enumerate().rev() {
            let layer = i + 1;
            let in_ch = if i == 0 { 1 } else { self.desc.conv[i - 1].out_channels };
            if spec.pool {
                shapes.push(ParamShape::conv_transpose(
                    format!("dec.up{layer}"),
                    spec.out_channels,
                    spec.out_channels,
                    POOL,
                ));
            }
            shapes.push(ParamShape::conv_transpose(
                format!("dec.deconv{layer}"),
                spec.out_channels,
                in_ch,
                spec.kernel,
            ));
        }
        Ok(shapes)
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet<f32>> {
        init_params(&self.param_shapes()?, seed)
    }

    /// Bottleneck codes `[N, feature_dim]` for frames `[N,1,H,W]`.
    pub fn encode<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.infer(params, x)
    }

    pub fn reconstruct<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        let code = self.encoder.infer(params, x)?;
        self.decoder.infer(params, code)
    }

    /// Reconstruction MSE, parameter gradients and input gradient.
    pub fn loss_and_grad<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<(T, ParamSet<T>, Tensor<T>)> {
        let (code, enc_cache) = self.encoder.forward(params, x.clone())?;
        let (recon, dec_cache) = self.decoder.forward(params, code)?;
        let (loss, grad_recon) = mse_loss(&recon, &x)?;
        let (grad_code, mut grads) = self.decoder.backward(dec_cache, grad_recon.clone())?;
        let (grad_direct, enc_grads) = self.encoder.backward(enc_cache, grad_code)?;
        grads.merge(enc_grads)?;
        // The input is also the target, which contributes -grad_recon.
        let grad_x = grad_direct.zip_map(&grad_recon, |a, b| a - b)?;
        Ok((loss, grads, grad_x))
    }

    /// Mean reconstruction error over `frames`, evaluated in chunks.
    pub fn mse(&self, params: &ParamSet<f32>, frames: &Tensor<f32>) -> Result<f64> {
        let n = frames.dims()[0];
        if n == 0 {
            return Err(Error::Empty("frame set"));
        }
        let mut total = 0.0;
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let x = select_rows(frames, &idx)?;
            let recon = self.reconstruct(params, x.clone())?;
            let (loss, _) = mse_loss(&recon, &x)?;
            total += loss as f64 * idx.len() as f64;
        }
        Ok(total / n as f64)
    }
}

struct ReconstructionObjective<'a> {
    model: &'a Cae,
    train: &'a Tensor<f32>,
    val: &'a Tensor<f32>,
}

impl Objective for ReconstructionObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.dims()[0]
    }

    fn loss_and_grad(&self, params: &ParamSet<f32>, batch: &[usize]) -> Result<(f64, ParamSet<f32>)> {
        let (loss, grads, _) = self.model.loss_and_grad(params, select_rows(self.train, batch)?)?;
        Ok((loss as f64, grads))
    }

    fn validate(&self, params: &ParamSet<f32>) -> Result<f64> {
        self.model.mse(params, self.val)
    }

    fn selection(&self) -> Selection {
        Selection::Minimize
    }
}

/// Trains the autoencoder to reconstruct `train` frames `[N,1,H,W]`, keeping
/// the parameters with the lowest reconstruction error on `val`.
pub fn train_cae(
    model: &Cae,
    train: &Tensor<f32>,
    val: &Tensor<f32>,
    config: &OptimConfig,
    seed: u64,
) -> Result<ModelCheckpoint> {
    let frame = model.desc.frame_dims();
    for (name, t) in [("training", train), ("validation", val)] {
        if t.rank() != 4 || t.dims()[1..] != frame {
            return Err(Error::ProfileMismatch {
                expected: format!("[N, {}, {}, {}] {name} frames", frame[0], frame[1], frame[2]),
                found: format!("{:?}", t.dims()),
            });
        }
    }
    if let Some(v) = train.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("training frame value {v} outside [0, 1]")));
    }
    let params = model.init_params(seed)?;
    let state = OptimizerState::new(config.clone(), &params);
    let objective = ReconstructionObjective { model, train, val };
    let arch = ModelArchitecture::Cae {
        descriptor: model.desc.clone(),
    };
    train_loop(&objective, params, arch.to_json()?, state, seed)
}

/// The frozen encoder half of a trained autoencoder.
#[derive(Debug, Clone)]
pub struct CaeEncoder {
    pub model: Cae,
    /// Only `enc.*` tensors.
    pub params: ParamSet<f32>,
}

impl CaeEncoder {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let desc = match ModelArchitecture::from_json(&ckpt.architecture)? {
            ModelArchitecture::Cae { descriptor } => descriptor,
            other => {
                return Err(Error::Architecture(format!(
                    "expected an autoencoder checkpoint, found {}",
                    kind_name(&other)
                )))
            }
        };
        let model = build_cae(&desc)?;
        let params = take_params(&ckpt.params, &model.encoder.param_names())?;
        Ok(CaeEncoder { model, params })
    }

    /// Reads only the `enc.*` tensors of a checkpoint file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&load_checkpoint_subset(path, &["enc.*"])?)
    }

    pub fn extract(&self, frames: Tensor<f32>) -> Result<Tensor<f32>> {
        self.model.encode(&self.params, frames)
    }
}
