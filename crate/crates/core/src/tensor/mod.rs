//! Dense row-major n-dimensional arrays.
//!
//! A [`Tensor`] owns a flat buffer whose length always equals the product of its
//! shape. Image batches use NCHW layout. There is no general broadcasting; layers
//! implement the bias-add patterns they need themselves.

mod io;
pub mod kernels;
mod scalar;

use std::fmt;

pub use io::{read_tensor, read_tensor_from, tensor_from_bytes, tensor_to_bytes, write_tensor, write_tensor_to};
pub use scalar::{DType, Scalar};

use crate::error::{Error, Result};

/// Dimension sizes of a tensor. Rank is at least one and every dim is at least one.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidShape(dims.to_vec()));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Reduction target for [`Tensor::reduce_sum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Index(usize),
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::ElementCount {
                shape: dims.to_vec(),
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::one())
    }

    pub fn from_fn(dims: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(f).collect();
        Ok(Tensor { shape, data })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(&[n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            left: self.dims().to_vec(),
            right: other.dims().to_vec(),
        };
        if self.rank() != 2 || other.rank() != 2 || self.dims()[1] != other.dims()[0] {
            return Err(mismatch());
        }
        let (m, k, n) = (self.dims()[0], self.dims()[1], other.dims()[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, &self.data, &other.data, &mut out, false);
        Tensor::new(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                left: self.dims().to_vec(),
                right: vec![],
            });
        }
        let (r, c) = (self.dims()[0], self.dims()[1]);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new(&[c, r], out)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "zip_map",
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Sums along one axis (dropping it) or over everything (yielding shape `[1]`).
    pub fn reduce_sum(&self, axis: Axis) -> Result<Tensor<T>> {
        match axis {
            Axis::All => Ok(Tensor::scalar(self.data.iter().copied().sum())),
            Axis::Index(axis) => {
                let dims = self.dims();
                if axis >= dims.len() {
                    return Err(Error::AxisOutOfRange {
                        axis,
                        rank: dims.len(),
                    });
                }
                let outer: usize = dims[..axis].iter().product();
                let len = dims[axis];
                let inner: usize = dims[axis + 1..].iter().product();
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                        let dst = &mut out[o * inner..(o + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                let mut new_dims: Vec<usize> = dims.to_vec();
                new_dims.remove(axis);
                if new_dims.is_empty() {
                    new_dims.push(1);
                }
                Tensor::new(&new_dims, out)
            }
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn reshape(self, new_dims: &[usize]) -> Result<Tensor<T>> {
        let shape = Shape::new(new_dims)?;
        if shape.numel() != self.data.len() {
            return Err(Error::ElementCount {
                shape: new_dims.to_vec(),
                expected: shape.numel(),
                actual: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Copy of the `index`-th slice along the leading axis.
    pub fn index_outer(&self, index: usize) -> Result<Tensor<T>> {
        let dims = self.dims();
        if index >= dims[0] {
            return Err(Error::AxisOutOfRange {
                axis: index,
                rank: dims[0],
            });
        }
        let inner: usize = dims[1..].iter().product();
        let sub_dims = if dims.len() == 1 { vec![1] } else { dims[1..].to_vec() };
        Tensor::new(&sub_dims, self.data[index * inner..(index + 1) * inner].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Tensor<T>> {
        let first = items.first().ok_or(Error::Empty("stack input"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.dims().to_vec(),
                    right: t.dims().to_vec(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        Tensor::new(&dims, data)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "axpy",
                left: self.dims().to_vec(),
                right: other.dims().to_vec(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}
