use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Named parameter tensors, ordered by name.
///
/// Names are dotted paths such as `enc.conv1.w`. The same type carries gradients,
/// where each entry mirrors the shape of the parameter of the same name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds `grad` into the entry `name`, inserting it if absent.
    pub fn accumulate(&mut self, name: &str, grad: Tensor<T>) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(existing) => existing.axpy(T::one(), &grad),
            None => {
                self.tensors.insert(name.to_string(), grad);
                Ok(())
            }
        }
    }

    /// Moves every entry of `other` into `self`, summing on name collisions.
    pub fn merge(&mut self, other: ParamSet<T>) -> Result<()> {
        for (name, t) in other.tensors {
            self.accumulate(&name, t)?;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.dims()).expect("valid shape")))
                .collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn with_prefix(&self, prefix: &str) -> ParamSet<T> {
        self.filter(|n| n.starts_with(prefix))
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, alpha: T) {
        self.tensors.values_mut().for_each(|t| t.scale(alpha));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

impl<T> FromIterator<(String, Tensor<T>)> for ParamSet<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

impl<T> IntoIterator for ParamSet<T> {
    type Item = (String, Tensor<T>);
    type IntoIter = std::collections::btree_map::IntoIter<String, Tensor<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_iter()
    }
}
