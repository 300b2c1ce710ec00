use crate::error::{Error, Result};
use crate::nn::conv::conv_out_len;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_dims: Vec<usize>,
    /// Flat input index of the selected maximum for every output element.
    argmax: Vec<usize>,
}

/// Max pooling over `[N,C,H,W]`. Ties resolve to the first maximal element in
/// row-major window order, and the backward pass routes gradient there.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, MaxPoolCache)> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "maxpool",
            left: x.dims().to_vec(),
            right: vec![window, window],
        });
    }
    let [n, c, h, w] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let oh = conv_out_len("maxpool", h, window, stride, 0)?;
    let ow = conv_out_len("maxpool", w, window, stride, 0)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = data[best_idx];
                for ki in 0..window {
                    for kj in 0..window {
                        let idx = base + (oy * stride + ki) * w + ox * stride + kj;
                        if data[idx] > best {
                            best = data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(&[n, c, oh, ow], out)?,
        MaxPoolCache {
            input_dims: x.dims().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &MaxPoolCache) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool_backward",
            left: grad_out.dims().to_vec(),
            right: cache.input_dims.clone(),
        });
    }
    let mut gx = vec![T::zero(); cache.input_dims.iter().product()];
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Tensor::new(&cache.input_dims, gx)
}
