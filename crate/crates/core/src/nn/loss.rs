use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `[N,K]` logits, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax",
            left: logits.dims().to_vec(),
            right: vec![],
        });
    }
    let k = logits.dims()[1];
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(logits.dims(), out)
}

/// Mean negative log-likelihood of `labels` under softmax(`logits`), and its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || logits.dims()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.dims().to_vec(),
            right: vec![labels.len()],
        });
    }
    let (n, k) = (logits.dims()[0], logits.dims()[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = vec![T::zero(); n * k];
    let mut loss = T::zero();
    for (s, (row, &label)) in logits.data().chunks_exact(k).zip(labels).enumerate() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - row[label];
        let g = &mut grad[s * k..(s + 1) * k];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - lse).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::new(&[n, k], grad)?))
}

/// Mean squared error over all elements and its gradient `2(pred - target)/count`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            left: pred.dims().to_vec(),
            right: target.dims().to_vec(),
        });
    }
    let count = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut loss = CompensatedSum::default();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss.add(d * d);
            two * d / count
        })
        .collect();
    Ok((loss.total() / count, Tensor::new(pred.dims(), grad)?))
}

/// Neumaier summation. A plain running sum over thousands of pixels loses
/// the low bits that finite-difference gradient checks depend on.
#[derive(Default)]
struct CompensatedSum<T> {
    sum: T,
    compensation: T,
}

impl<T: Scalar> CompensatedSum<T> {
    fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> T {
        self.sum + self.compensation
    }
}
