use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by path.
///
/// The ordering is what fixes the flattening layout used by secure
/// aggregation, so it must stay a sorted map.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Paths are unique.
    pub fn insert(&mut self, path: impl Into<String>, t: Tensor) -> Result<()> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(Error::Contract(format!("duplicate parameter path {path}")));
        }
        self.tensors.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.get(path)
    }

    /// Replaces the value of an existing parameter; the shape may not change.
    pub fn set(&mut self, path: &str, t: Tensor) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(path)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {path}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::dim(format!(
                "parameter {path} has shape {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Sub-store of every path starting with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore {
        let tensors = self
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamStore { tensors }
    }

    /// Merges `other` into `self`; paths must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.tensors {
            self.insert(k, v)?;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        self.tensors
            .iter()
            .map(|(k, v)| other.get(k).map_or(f64::INFINITY, |o| v.max_abs_diff(o)))
            .fold(0.0, f64::max)
    }
}

/// Gradients keyed like the [`ParamStore`] they differentiate.
pub type GradStore = ParamStore;

impl ParamStore {
    pub fn zeros_like(store: &ParamStore) -> GradStore {
        let tensors = store
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        ParamStore { tensors }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.tensors.values_mut().for_each(|t| t.scale_in_place(c));
    }

    /// Flattens all tensors in path order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Inverse of [`ParamStore::flatten`] using `self` as the layout template.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<ParamStore> {
        if flat.len() != self.numel() {
            return Err(Error::dim(format!(
                "flat vector of {} values for a store of {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        let mut tensors = BTreeMap::new();
        for (k, v) in &self.tensors {
            let n = v.len();
            tensors.insert(k.clone(), Tensor::new(v.shape().to_vec(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(ParamStore { tensors })
    }

    pub fn add_scaled(&mut self, other: &GradStore, c: f64) -> Result<()> {
        for (k, t) in &mut self.tensors {
            if let Some(o) = other.get(k) {
                if o.shape() != t.shape() {
                    return Err(Error::dim(format!("gradient shape mismatch at {k}")));
                }
                t.data_mut().iter_mut().zip(o.data()).for_each(|(a, b)| *a += c * b);
            }
        }
        Ok(())
    }
}

/// Scales `grads` so its global L2 norm is at most `delta`.
pub fn clip_gradient_norm(grads: &GradStore, delta: f64) -> Result<GradStore> {
    if !(delta > 0.0) {
        return Err(Error::Parameter(format!("clip threshold must be positive, got {delta}")));
    }
    let norm = grads.global_norm();
    let mut out = grads.clone();
    if norm > delta {
        out.scale(delta / norm);
    }
    Ok(out)
}
