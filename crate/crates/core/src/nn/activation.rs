use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Gradient through ReLU given the forward *output*.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(output, |g, y| if y > T::zero() { g } else { T::zero() })
}

/// Gradient through the logistic sigmoid given the forward *output*.
pub fn sigmoid_backward<T: Scalar>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(output, |g, y| g * y * (T::one() - y))
}
