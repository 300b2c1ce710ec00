use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    input: Tensor<T>,
    weight: Tensor<T>,
}

/// Affine map `x·w + b` for `x: [N,d_in]`, `w: [d_in,d_out]`, `b: [d_out]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
    if x.rank() != 2 || w.rank() != 2 || x.dims()[1] != w.dims()[0] || b.dims() != [w.dims()[1]] {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: x.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    let (n, din, dout) = (x.dims()[0], w.dims()[0], w.dims()[1]);
    let mut out = Vec::with_capacity(n * dout);
    for _ in 0..n {
        out.extend_from_slice(b.data());
    }
    gemm_nn(n, din, dout, x.data(), w.data(), &mut out, true);
    Ok((
        Tensor::new(&[n, dout], out)?,
        DenseCache {
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &DenseCache<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, din) = (cache.input.dims()[0], cache.input.dims()[1]);
    let dout = cache.weight.dims()[1];
    if grad_out.dims() != [n, dout] {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: grad_out.dims().to_vec(),
            right: vec![n, dout],
        });
    }
    let mut gx = vec![T::zero(); n * din];
    gemm_nt(n, dout, din, grad_out.data(), cache.weight.data(), &mut gx, false);
    let mut gw = vec![T::zero(); din * dout];
    gemm_tn(din, n, dout, cache.input.data(), grad_out.data(), &mut gw, false);
    let mut gb = vec![T::zero(); dout];
    for row in grad_out.data().chunks_exact(dout) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok((
        Tensor::new(&[n, din], gx)?,
        Tensor::new(&[din, dout], gw)?,
        Tensor::new(&[dout], gb)?,
    ))
}
