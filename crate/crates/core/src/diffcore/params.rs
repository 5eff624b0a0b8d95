use std::collections::BTreeMap;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors. Iteration is name-sorted, which fixes the
/// order of every traversal (optimizer, checkpoint, gradient check).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::validation(format!("unknown parameter `{name}`")))
    }

    /// Replace a parameter's values. The shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::validation(format!("unknown parameter `{name}`")))?;
        if slot.shape() != value.shape() {
            return Err(Error::validation(format!(
                "parameter `{name}` has shape {:?}, refusing {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Merge another store in; names must not collide.
    pub fn extend(&mut self, other: ParamStore<T>) -> Result<()> {
        for (k, v) in other.entries {
            self.insert(k, v)?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { entries: self.entries.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Gradients keyed by parameter name, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub(crate) entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        ParamGrads {
            entries: store.iter().map(|(k, v)| (k.to_string(), Tensor::zeros(v.shape()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// `self += scale · other` over the names both share.
    pub fn axpy(&mut self, scale: T, other: &ParamGrads<T>) {
        for (name, g) in self.entries.iter_mut() {
            if let Some(o) = other.entries.get(name) {
                for (a, &b) in g.data_mut().iter_mut().zip(o.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn scaled(&self, c: T) -> ParamGrads<T> {
        ParamGrads {
            entries: self.entries.iter().map(|(k, v)| (k.clone(), v.map(|x| x * c))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|t| t.all_finite())
    }

    /// The entries whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamGrads<T> {
        ParamGrads {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Zero every gradient whose name does not start with `prefix`.
    pub fn restrict_to(&mut self, prefix: &str) {
        for (name, g) in self.entries.iter_mut() {
            if !name.starts_with(prefix) {
                g.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}
