//! 2-D convolution (cross-correlation, no kernel flip) and its transpose, both
//! lowered to matrix products over an im2col buffer.

use crate::error::{Error, Result};
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Output length of a strided window sweep, or an error when it is not integral.
pub fn conv_out_len(op: &'static str, len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded || (padded - kernel) % stride != 0 {
        return Err(Error::NonIntegral {
            op,
            detail: format!("len {len}, kernel {kernel}, stride {stride}, pad {pad}"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution.
pub fn conv_transpose_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let full = (len - 1) * stride + kernel;
    if stride == 0 || full <= 2 * pad {
        return Err(Error::NonIntegral {
            op: "conv_transpose2d",
            detail: format!("len {len}, kernel {kernel}, stride {stride}, pad {pad}"),
        });
    }
    Ok(full - 2 * pad)
}

/// `cols[(c*kh + ki)*kw + kj, oy*out_w + ox] = src[c, oy*s + ki - p, ox*s + kj - p]`
fn im2col<T: Scalar>(src: &[T], g: &Geometry, cols: &mut [T]) {
    let q = g.cols();
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &mut cols[r * q..(r + 1) * q];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `dst` (accumulating).
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dst: &mut [T]) {
    let q = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let r = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[r * q..(r + 1) * q];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst_row[ix as usize] += row[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn check_rank4<T: Scalar>(op: &'static str, x: &Tensor<T>, w: &Tensor<T>) -> Result<()> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op,
            left: x.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    geometry: Geometry,
    batch: usize,
    cols: Vec<T>,
    weight: Tensor<T>,
}

/// `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, `b: [O]` → `[N,O,H',W']` with zero padding.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    check_rank4("conv2d", x, w)?;
    let [n, c, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [o, wc, kh, kw] = [w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]];
    if wc != c || b.dims() != [o] {
        return Err(Error::ShapeMismatch {
            op: "conv2d channels",
            left: x.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    let g = Geometry {
        channels: c,
        height: h,
        width: wd,
        kh,
        kw,
        stride,
        pad,
        out_h: conv_out_len("conv2d", h, kh, stride, pad)?,
        out_w: conv_out_len("conv2d", wd, kw, stride, pad)?,
    };
    let (r, q) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); n * r * q];
    let mut out = vec![T::zero(); n * o * q];
    let in_stride = c * h * wd;
    for s in 0..n {
        let col = &mut cols[s * r * q..(s + 1) * r * q];
        im2col(&x.data()[s * in_stride..(s + 1) * in_stride], &g, col);
        let dst = &mut out[s * o * q..(s + 1) * o * q];
        for (oc, plane) in dst.chunks_exact_mut(q).enumerate() {
            plane.iter_mut().for_each(|v| *v = b.data()[oc]);
        }
        gemm_nn(o, r, q, w.data(), col, dst, true);
    }
    let y = Tensor::new(&[n, o, g.out_h, g.out_w], out)?;
    Ok((
        y,
        Conv2dCache {
            geometry: g,
            batch: n,
            cols,
            weight: w.clone(),
        },
    ))
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &Conv2dCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = &cache.geometry;
    let w = &cache.weight;
    let o = w.dims()[0];
    let (r, q) = (g.rows(), g.cols());
    let n = cache.batch;
    if grad_out.dims() != [n, o, g.out_h, g.out_w] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: grad_out.dims().to_vec(),
            right: vec![n, o, g.out_h, g.out_w],
        });
    }
    let in_stride = g.channels * g.height * g.width;
    let mut gx = vec![T::zero(); n * in_stride];
    let mut gw = vec![T::zero(); o * r];
    let mut gb = vec![T::zero(); o];
    let mut gcols = vec![T::zero(); r * q];
    for s in 0..n {
        let go = &grad_out.data()[s * o * q..(s + 1) * o * q];
        for (oc, plane) in go.chunks_exact(q).enumerate() {
            gb[oc] += plane.iter().copied().sum::<T>();
        }
        gemm_nt(o, q, r, go, &cache.cols[s * r * q..(s + 1) * r * q], &mut gw, true);
        gemm_tn(r, o, q, w.data(), go, &mut gcols, false);
        col2im(&gcols, g, &mut gx[s * in_stride..(s + 1) * in_stride]);
    }
    Ok((
        Tensor::new(&[n, g.channels, g.height, g.width], gx)?,
        Tensor::new(w.dims(), gw)?,
        Tensor::new(&[o], gb)?,
    ))
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2dCache<T> {
    geometry: Geometry,
    input: Tensor<T>,
    weight: Tensor<T>,
}

/// Transposed convolution. `x: [N,Cin,H,W]`, `w: [Cin,Cout,kh,kw]`, `b: [Cout]`
/// → `[N,Cout,(H-1)s-2p+kh,(W-1)s-2p+kw]`. It is the adjoint of
/// [`conv2d_forward`] with the same kernel geometry, plus a bias.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvTranspose2dCache<T>)> {
    check_rank4("conv_transpose2d", x, w)?;
    let [n, cin, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let [wcin, cout, kh, kw] = [w.dims()[0], w.dims()[1], w.dims()[2], w.dims()[3]];
    if wcin != cin || b.dims() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d channels",
            left: x.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    let out_h = conv_transpose_out_len(h, kh, stride, pad)?;
    let out_w = conv_transpose_out_len(wd, kw, stride, pad)?;
    // Geometry of the equivalent forward convolution from the output image back
    // onto the input grid.
    let g = Geometry {
        channels: cout,
        height: out_h,
        width: out_w,
        kh,
        kw,
        stride,
        pad,
        out_h: h,
        out_w: wd,
    };
    let (r, q) = (g.rows(), g.cols());
    let out_plane = out_h * out_w;
    let mut out = vec![T::zero(); n * cout * out_plane];
    let mut cols = vec![T::zero(); r * q];
    for s in 0..n {
        let xs = &x.data()[s * cin * q..(s + 1) * cin * q];
        gemm_tn(r, cin, q, w.data(), xs, &mut cols, false);
        let dst = &mut out[s * cout * out_plane..(s + 1) * cout * out_plane];
        for (oc, plane) in dst.chunks_exact_mut(out_plane).enumerate() {
            plane.iter_mut().for_each(|v| *v = b.data()[oc]);
        }
        col2im(&cols, &g, dst);
    }
    let y = Tensor::new(&[n, cout, out_h, out_w], out)?;
    Ok((
        y,
        ConvTranspose2dCache {
            geometry: g,
            input: x.clone(),
            weight: w.clone(),
        },
    ))
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &ConvTranspose2dCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = &cache.geometry;
    let x = &cache.input;
    let w = &cache.weight;
    let [n, cin] = [x.dims()[0], x.dims()[1]];
    let cout = g.channels;
    if grad_out.dims() != [n, cout, g.height, g.width] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d_backward",
            left: grad_out.dims().to_vec(),
            right: vec![n, cout, g.height, g.width],
        });
    }
    let (r, q) = (g.rows(), g.cols());
    let out_plane = g.height * g.width;
    let mut gx = vec![T::zero(); n * cin * q];
    let mut gw = vec![T::zero(); cin * r];
    let mut gb = vec![T::zero(); cout];
    let mut gcols = vec![T::zero(); r * q];
    for s in 0..n {
        let go = &grad_out.data()[s * cout * out_plane..(s + 1) * cout * out_plane];
        for (oc, plane) in go.chunks_exact(out_plane).enumerate() {
            gb[oc] += plane.iter().copied().sum::<T>();
        }
        im2col(go, g, &mut gcols);
        gemm_nn(cin, r, q, w.data(), &gcols, &mut gx[s * cin * q..(s + 1) * cin * q], false);
        gemm_nt(cin, q, r, &x.data()[s * cin * q..(s + 1) * cin * q], &gcols, &mut gw, true);
    }
    Ok((
        Tensor::new(x.dims(), gx)?,
        Tensor::new(w.dims(), gw)?,
        Tensor::new(&[cout], gb)?,
    ))
}
