//! A linear stack of layers evaluated against a [`ParamSet`].
//!
//! Layers refer to their parameters by name (`<name>.w`, `<name>.b`), so the
//! same stack definition runs in f32 for training and f64 for gradient checks.

use crate::error::{Error, Result};
use crate::nn::activation::{relu, relu_backward, sigmoid, sigmoid_backward};
use crate::nn::conv::{
    conv2d_backward, conv2d_forward, conv_transpose2d_backward, conv_transpose2d_forward, Conv2dCache,
    ConvTranspose2dCache,
};
use crate::nn::dense::{dense_backward, dense_forward, DenseCache};
use crate::nn::pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv2d { name: String, stride: usize, pad: usize },
    ConvTranspose2d { name: String, stride: usize, pad: usize },
    MaxPool { window: usize, stride: usize },
    Dense { name: String },
    Relu,
    Sigmoid,
    /// Reshapes to `[N, dims...]`, keeping the batch axis.
    Reshape { dims: Vec<usize> },
}

impl Layer {
    pub fn param_name(&self) -> Option<&str> {
        match self {
            Layer::Conv2d { name, .. } | Layer::ConvTranspose2d { name, .. } | Layer::Dense { name } => Some(name),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(Conv2dCache<T>),
    ConvTranspose(ConvTranspose2dCache<T>),
    Pool(MaxPoolCache),
    Dense(DenseCache<T>),
    Relu(Tensor<T>),
    Sigmoid(Tensor<T>),
    Reshape(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct SequentialCache<T> {
    layers: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

fn weights<'p, T: Scalar>(params: &'p ParamSet<T>, name: &str) -> Result<(&'p Tensor<T>, &'p Tensor<T>)> {
    Ok((params.get(&format!("{name}.w"))?, params.get(&format!("{name}.b"))?))
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    /// Names of all parameter tensors the stack reads.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter_map(Layer::param_name)
            .flat_map(|n| [format!("{n}.w"), format!("{n}.b")])
            .collect()
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<(Tensor<T>, SequentialCache<T>)> {
        self.run(params, x, true)
    }

    /// Forward pass without keeping any backward state.
    pub fn infer<T: Scalar>(&self, params: &ParamSet<T>, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(params, x, false)?.0)
    }

    fn run<T: Scalar>(&self, params: &ParamSet<T>, mut x: Tensor<T>, keep: bool) -> Result<(Tensor<T>, SequentialCache<T>)> {
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Conv2d { name, stride, pad } => {
                    let (w, b) = weights(params, name)?;
                    let (y, c) = conv2d_forward(&x, w, b, *stride, *pad)?;
                    (y, LayerCache::Conv(c))
                }
                Layer::ConvTranspose2d { name, stride, pad } => {
                    let (w, b) = weights(params, name)?;
                    let (y, c) = conv_transpose2d_forward(&x, w, b, *stride, *pad)?;
                    (y, LayerCache::ConvTranspose(c))
                }
                Layer::MaxPool { window, stride } => {
                    let (y, c) = maxpool_forward(&x, *window, *stride)?;
                    (y, LayerCache::Pool(c))
                }
                Layer::Dense { name } => {
                    let (w, b) = weights(params, name)?;
                    let (y, c) = dense_forward(&x, w, b)?;
                    (y, LayerCache::Dense(c))
                }
                Layer::Relu => {
                    let y = x.map(relu);
                    let c = if keep { LayerCache::Relu(y.clone()) } else { LayerCache::Reshape(vec![]) };
                    (y, c)
                }
                Layer::Sigmoid => {
                    let y = x.map(sigmoid);
                    let c = if keep { LayerCache::Sigmoid(y.clone()) } else { LayerCache::Reshape(vec![]) };
                    (y, c)
                }
                Layer::Reshape { dims } => {
                    let before = x.dims().to_vec();
                    let mut new_dims = vec![before[0]];
                    new_dims.extend_from_slice(dims);
                    (x.reshape(&new_dims)?, LayerCache::Reshape(before))
                }
            };
            x = y;
            if keep {
                caches.push(cache);
            }
        }
        Ok((x, SequentialCache { layers: caches }))
    }

    /// Returns the input gradient and the parameter gradients of every layer.
    pub fn backward<T: Scalar>(
        &self,
        cache: SequentialCache<T>,
        grad_out: Tensor<T>,
    ) -> Result<(Tensor<T>, ParamSet<T>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Architecture(format!(
                "cache has {} layers, stack has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = ParamSet::new();
        let mut g = grad_out;
        for (layer, c) in self.layers.iter().zip(cache.layers).rev() {
            g = match (layer, c) {
                (Layer::Conv2d { name, .. }, LayerCache::Conv(c)) => {
                    let (gx, gw, gb) = conv2d_backward(&g, &c)?;
                    grads.accumulate(&format!("{name}.w"), gw)?;
                    grads.accumulate(&format!("{name}.b"), gb)?;
                    gx
                }
                (Layer::ConvTranspose2d { name, .. }, LayerCache::ConvTranspose(c)) => {
                    let (gx, gw, gb) = conv_transpose2d_backward(&g, &c)?;
                    grads.accumulate(&format!("{name}.w"), gw)?;
                    grads.accumulate(&format!("{name}.b"), gb)?;
                    gx
                }
                (Layer::MaxPool { .. }, LayerCache::Pool(c)) => maxpool_backward(&g, &c)?,
                (Layer::Dense { name }, LayerCache::Dense(c)) => {
                    let (gx, gw, gb) = dense_backward(&g, &c)?;
                    grads.accumulate(&format!("{name}.w"), gw)?;
                    grads.accumulate(&format!("{name}.b"), gb)?;
                    gx
                }
                (Layer::Relu, LayerCache::Relu(y)) => relu_backward(&g, &y)?,
                (Layer::Sigmoid, LayerCache::Sigmoid(y)) => sigmoid_backward(&g, &y)?,
                (Layer::Reshape { .. }, LayerCache::Reshape(before)) => g.reshape(&before)?,
                (layer, _) => {
                    return Err(Error::Architecture(format!("cache does not match layer {layer:?}")));
                }
            };
        }
        Ok((g, grads))
    }
}
