//! Single-layer LSTM with backpropagation through time.
//!
//! Parameters are one stacked weight `w: [d + H, 4H]` (input rows first, then
//! recurrent rows) and bias `b: [4H]`. Gate columns are ordered input, forget,
//! cell candidate, output.

use crate::error::{Error, Result};
use crate::nn::activation::sigmoid;
use crate::tensor::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{Scalar, Tensor};

/// Gate block offsets inside the `4H` axis.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// Activated gates `[N, 4H]`.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmSequenceCache<T> {
    batch: usize,
    input_dim: usize,
    hidden: usize,
    steps: Vec<LstmStepCache<T>>,
    final_h: Vec<T>,
    weight: Tensor<T>,
}

fn dims<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>, input_dim: usize) -> Result<usize> {
    if w.rank() != 2 || w.dims()[1] % 4 != 0 {
        return Err(Error::ShapeMismatch {
            op: "lstm weight",
            left: w.dims().to_vec(),
            right: vec![input_dim, 4],
        });
    }
    let hidden = w.dims()[1] / 4;
    if w.dims()[0] != input_dim + hidden || b.dims() != [4 * hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm params",
            left: w.dims().to_vec(),
            right: b.dims().to_vec(),
        });
    }
    Ok(hidden)
}

fn step_forward<T: Scalar>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    n: usize,
    d: usize,
    hidden: usize,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> (Vec<T>, Vec<T>, LstmStepCache<T>) {
    let g4 = 4 * hidden;
    let (wx, wh) = w.data().split_at(d * g4);
    let mut z = Vec::with_capacity(n * g4);
    for _ in 0..n {
        z.extend_from_slice(b.data());
    }
    gemm_nn(n, d, g4, x, wx, &mut z, true);
    gemm_nn(n, hidden, g4, h_prev, wh, &mut z, true);
    let mut c = vec![T::zero(); n * hidden];
    let mut h = vec![T::zero(); n * hidden];
    let mut tanh_c = vec![T::zero(); n * hidden];
    for s in 0..n {
        let zr = &mut z[s * g4..(s + 1) * g4];
        for j in 0..hidden {
            let i = sigmoid(zr[GATE_INPUT * hidden + j]);
            let f = sigmoid(zr[GATE_FORGET * hidden + j]);
            let g = zr[GATE_CELL * hidden + j].tanh();
            let o = sigmoid(zr[GATE_OUTPUT * hidden + j]);
            zr[GATE_INPUT * hidden + j] = i;
            zr[GATE_FORGET * hidden + j] = f;
            zr[GATE_CELL * hidden + j] = g;
            zr[GATE_OUTPUT * hidden + j] = o;
            let k = s * hidden + j;
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            h[k] = o * tanh_c[k];
        }
    }
    let cache = LstmStepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates: z,
        tanh_c,
    };
    (h, c, cache)
}

/// Gradients of one step. Accumulates into `gw`/`gb` and returns
/// `(grad_x, grad_h_prev, grad_c_prev)`.
fn step_backward<T: Scalar>(
    grad_h: &[T],
    grad_c: &[T],
    cache: &LstmStepCache<T>,
    n: usize,
    d: usize,
    hidden: usize,
    w: &Tensor<T>,
    gw: &mut [T],
    gb: &mut [T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let g4 = 4 * hidden;
    let one = T::one();
    let mut dz = vec![T::zero(); n * g4];
    let mut dc_prev = vec![T::zero(); n * hidden];
    for s in 0..n {
        let gates = &cache.gates[s * g4..(s + 1) * g4];
        let dzr = &mut dz[s * g4..(s + 1) * g4];
        for j in 0..hidden {
            let k = s * hidden + j;
            let i = gates[GATE_INPUT * hidden + j];
            let f = gates[GATE_FORGET * hidden + j];
            let g = gates[GATE_CELL * hidden + j];
            let o = gates[GATE_OUTPUT * hidden + j];
            let tc = cache.tanh_c[k];
            let dh = grad_h[k];
            let dc = grad_c[k] + dh * o * (one - tc * tc);
            let d_o = dh * tc;
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * cache.c_prev[k];
            dc_prev[k] = dc * f;
            dzr[GATE_INPUT * hidden + j] = d_i * i * (one - i);
            dzr[GATE_FORGET * hidden + j] = d_f * f * (one - f);
            dzr[GATE_CELL * hidden + j] = d_g * (one - g * g);
            dzr[GATE_OUTPUT * hidden + j] = d_o * o * (one - o);
        }
    }
    let (wx, wh) = w.data().split_at(d * g4);
    let (gwx, gwh) = gw.split_at_mut(d * g4);
    gemm_tn(d, n, g4, &cache.x, &dz, gwx, true);
    gemm_tn(hidden, n, g4, &cache.h_prev, &dz, gwh, true);
    for row in dz.chunks_exact(g4) {
        for (acc, &v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut dx = vec![T::zero(); n * d];
    gemm_nt(n, g4, d, &dz, wx, &mut dx, false);
    let mut dh_prev = vec![T::zero(); n * hidden];
    gemm_nt(n, g4, hidden, &dz, wh, &mut dh_prev, false);
    (dx, dh_prev, dc_prev)
}

/// One LSTM cell update: `x: [N,d]`, `h, c: [N,H]` → `(h', c', cache)`.
pub fn lstm_step<T: Scalar>(
    x: &Tensor<T>,
    h: &Tensor<T>,
    c: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, LstmSequenceCache<T>)> {
    if x.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "lstm_step input",
            left: x.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    let (n, d) = (x.dims()[0], x.dims()[1]);
    let hidden = dims(w, b, d)?;
    if h.dims() != [n, hidden] || c.dims() != [n, hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step state",
            left: h.dims().to_vec(),
            right: vec![n, hidden],
        });
    }
    let (h2, c2, cache) = step_forward(x.data(), h.data(), c.data(), n, d, hidden, w, b);
    let final_h = h2.clone();
    Ok((
        Tensor::new(&[n, hidden], h2)?,
        Tensor::new(&[n, hidden], c2)?,
        LstmSequenceCache {
            batch: n,
            input_dim: d,
            hidden,
            steps: vec![cache],
            final_h,
            weight: w.clone(),
        },
    ))
}

/// Gradients of a single [`lstm_step`] given upstream `grad_h'` and `grad_c'`.
/// Returns `(grad_x, grad_h, grad_c, grad_w, grad_b)`.
pub fn lstm_step_backward<T: Scalar>(
    grad_h: &Tensor<T>,
    grad_c: &Tensor<T>,
    cache: &LstmSequenceCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, hidden) = (cache.batch, cache.input_dim, cache.hidden);
    if cache.steps.len() != 1 || grad_h.dims() != [n, hidden] || grad_c.dims() != [n, hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm_step_backward",
            left: grad_h.dims().to_vec(),
            right: vec![n, hidden],
        });
    }
    let mut gw = vec![T::zero(); cache.weight.len()];
    let mut gb = vec![T::zero(); 4 * hidden];
    let (dx, dh, dc) = step_backward(
        grad_h.data(),
        grad_c.data(),
        &cache.steps[0],
        n,
        d,
        hidden,
        &cache.weight,
        &mut gw,
        &mut gb,
    );
    Ok((
        Tensor::new(&[n, d], dx)?,
        Tensor::new(&[n, hidden], dh)?,
        Tensor::new(&[n, hidden], dc)?,
        Tensor::new(cache.weight.dims(), gw)?,
        Tensor::new(&[4 * hidden], gb)?,
    ))
}

/// Runs the cell over `features: [N,T,d]` from a zero state and returns the
/// final hidden state `[N,H]`.
pub fn lstm_sequence<T: Scalar>(
    features: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, LstmSequenceCache<T>)> {
    if features.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "lstm_sequence",
            left: features.dims().to_vec(),
            right: w.dims().to_vec(),
        });
    }
    let [n, t, d] = [features.dims()[0], features.dims()[1], features.dims()[2]];
    if t == 0 {
        return Err(Error::Empty("sequence"));
    }
    let hidden = dims(w, b, d)?;
    let mut h = vec![T::zero(); n * hidden];
    let mut c = vec![T::zero(); n * hidden];
    let mut steps = Vec::with_capacity(t);
    let mut x = vec![T::zero(); n * d];
    for step in 0..t {
        for s in 0..n {
            let src = &features.data()[(s * t + step) * d..(s * t + step + 1) * d];
            x[s * d..(s + 1) * d].copy_from_slice(src);
        }
        let (h2, c2, cache) = step_forward(&x, &h, &c, n, d, hidden, w, b);
        h = h2;
        c = c2;
        steps.push(cache);
    }
    Ok((
        Tensor::new(&[n, hidden], h.clone())?,
        LstmSequenceCache {
            batch: n,
            input_dim: d,
            hidden,
            steps,
            final_h: h,
            weight: w.clone(),
        },
    ))
}

/// Backpropagation through time from a gradient on the final hidden state.
/// Returns `(grad_features, grad_w, grad_b)`.
pub fn lstm_sequence_backward<T: Scalar>(
    grad_h_last: &Tensor<T>,
    cache: &LstmSequenceCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, hidden) = (cache.batch, cache.input_dim, cache.hidden);
    if grad_h_last.dims() != [n, hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm_sequence_backward",
            left: grad_h_last.dims().to_vec(),
            right: vec![n, hidden],
        });
    }
    let t = cache.steps.len();
    let mut gw = vec![T::zero(); cache.weight.len()];
    let mut gb = vec![T::zero(); 4 * hidden];
    let mut gfeat = vec![T::zero(); n * t * d];
    let mut dh = grad_h_last.data().to_vec();
    let mut dc = vec![T::zero(); n * hidden];
    for step in (0..t).rev() {
        let (dx, dh_prev, dc_prev) =
            step_backward(&dh, &dc, &cache.steps[step], n, d, hidden, &cache.weight, &mut gw, &mut gb);
        for s in 0..n {
            gfeat[(s * t + step) * d..(s * t + step + 1) * d].copy_from_slice(&dx[s * d..(s + 1) * d]);
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok((
        Tensor::new(&[n, t, d], gfeat)?,
        Tensor::new(cache.weight.dims(), gw)?,
        Tensor::new(&[4 * hidden], gb)?,
    ))
}

/// Like [`lstm_sequence`] but returns every hidden state, `[N,T,H]`, so the
/// output can feed another recurrent layer.
pub fn lstm_sequence_states<T: Scalar>(
    features: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<(Tensor<T>, LstmSequenceCache<T>)> {
    let (_, cache) = lstm_sequence(features, w, b)?;
    let (n, hidden, t) = (cache.batch, cache.hidden, cache.steps.len());
    let mut states = vec![T::zero(); n * t * hidden];
    for step in 0..t {
        let h = if step + 1 < t {
            &cache.steps[step + 1].h_prev
        } else {
            &cache.final_h
        };
        for s in 0..n {
            states[(s * t + step) * hidden..(s * t + step + 1) * hidden]
                .copy_from_slice(&h[s * hidden..(s + 1) * hidden]);
        }
    }
    Ok((Tensor::new(&[n, t, hidden], states)?, cache))
}

/// Backpropagation through time with a gradient on every hidden state
/// `[N,T,H]`. Returns `(grad_features, grad_w, grad_b)`.
pub fn lstm_sequence_states_backward<T: Scalar>(
    grad_states: &Tensor<T>,
    cache: &LstmSequenceCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d, hidden) = (cache.batch, cache.input_dim, cache.hidden);
    let t = cache.steps.len();
    if grad_states.dims() != [n, t, hidden] {
        return Err(Error::ShapeMismatch {
            op: "lstm_sequence_states_backward",
            left: grad_states.dims().to_vec(),
            right: vec![n, t, hidden],
        });
    }
    let mut gw = vec![T::zero(); cache.weight.len()];
    let mut gb = vec![T::zero(); 4 * hidden];
    let mut gfeat = vec![T::zero(); n * t * d];
    let mut dh = vec![T::zero(); n * hidden];
    let mut dc = vec![T::zero(); n * hidden];
    for step in (0..t).rev() {
        for s in 0..n {
            let src = &grad_states.data()[(s * t + step) * hidden..(s * t + step + 1) * hidden];
            for (a, &g) in dh[s * hidden..(s + 1) * hidden].iter_mut().zip(src) {
                *a += g;
            }
        }
        let (dx, dh_prev, dc_prev) =
            step_backward(&dh, &dc, &cache.steps[step], n, d, hidden, &cache.weight, &mut gw, &mut gb);
        for s in 0..n {
            gfeat[(s * t + step) * d..(s * t + step + 1) * d].copy_from_slice(&dx[s * d..(s + 1) * d]);
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    Ok((
        Tensor::new(&[n, t, d], gfeat)?,
        Tensor::new(cache.weight.dims(), gw)?,
        Tensor::new(&[4 * hidden], gb)?,
    ))
}
