//! Named parameter storage.
//!
//! Parameters live in a [`ParamStore`]: an ordered map from name to tensor.
//! Iteration order is the sorted name order, which makes optimizer updates,
//! gradient clipping, and checkpoint serialization deterministic.

use std::collections::BTreeMap;

use rand::Rng;

use super::{Tensor, TensorError};

/// Gradients keyed by parameter name, as produced by a backward pass.
pub type GradMap = BTreeMap<String, Vec<f64>>;

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a tensor.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, TensorError> {
        self.map
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, TensorError> {
        self.map
            .get_mut(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Iterate in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total number of scalar entries across all tensors.
    pub fn total_len(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// Move every entry of `other` into this store under `prefix` + name.
    pub fn absorb_prefixed(&mut self, prefix: &str, other: ParamStore) {
        for (name, t) in other.map {
            self.map.insert(format!("{prefix}{name}"), t);
        }
    }

    /// Split out every entry whose name starts with `prefix`, stripping the
    /// prefix from the extracted names.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, t) in &self.map {
            if let Some(rest) = name.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }
}

/// Uniform initialization over `(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let s = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches generated length")
}
