use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Scalar;

/// Hyperparameters of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl OptimConfig {
    /// Defaults for the autoencoder phase. The reconstruction loss averages
    /// over every pixel, so its gradients are small and the step is large.
    pub fn cae() -> Self {
        OptimConfig {
            learning_rate: 1.0,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 30,
            patience: 10,
            clip_norm: None,
            max_steps: None,
        }
    }

    /// Defaults for the sequence classifier phase.
    pub fn lstm() -> Self {
        OptimConfig {
            learning_rate: 0.003,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            clip_norm: Some(5.0),
            max_steps: None,
        }
    }

    /// Defaults for the lip / non-lip patch classifier.
    pub fn patch_classifier() -> Self {
        OptimConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 30,
            patience: 10,
            clip_norm: None,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter, mirroring parameter shapes.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: OptimConfig,
    velocity: ParamSet<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimConfig, params: &ParamSet<T>) -> Self {
        OptimizerState {
            config,
            velocity: params.zeros_like(),
        }
    }

    pub fn velocity(&self) -> &ParamSet<T> {
        &self.velocity
    }
}

/// `v ← μ·v − lr·g; p ← p + v` for every parameter.
pub fn sgd_momentum_step<T: Scalar>(params: &mut ParamSet<T>, grads: &ParamSet<T>, state: &mut OptimizerState<T>) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "sgd step parameter count",
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    let lr = T::from_f64(state.config.learning_rate);
    let mu = T::from_f64(state.config.momentum);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let v = state.velocity.get_mut(name)?;
        if g.dims() != p.dims() || v.dims() != p.dims() {
            return Err(Error::ShapeMismatch {
                op: "sgd step",
                left: p.dims().to_vec(),
                right: g.dims().to_vec(),
            });
        }
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(())
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::from_f64(max_norm / norm));
    }
    norm
}
