//! Named parameter tensors with a JSON checkpoint format.
//!
//! A checkpoint is a single JSON object mapping tensor name to
//! `{"shape": [...], "data": [...]}` with row-major data. Floats are written in
//! shortest round-trip form, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut() -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| f()).collect(),
        }
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, || scale * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            _ => (1, self.data.len()),
        }
    }

    pub fn as_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.matrix_dims(), &self.data).expect("tensor shape")
    }

    pub fn as_matrix_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let dims = self.matrix_dims();
        ArrayViewMut2::from_shape(dims, &mut self.data).expect("tensor shape")
    }

    pub fn as_vector(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data)
    }
}

/// Named tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Mutable tensor, created as zeros of `shape` when absent.
    pub fn entry(&mut self, name: &str, shape: &[usize]) -> &mut Tensor {
        self.tensors
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(&v.shape)))
                .collect(),
        }
    }

    /// Copy of the tensors whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Inserts every tensor of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale * other` over the tensors present in both.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(name) {
                for (a, b) in t.data.iter_mut().zip(&o.data) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::ParamShape {
                    name: name.clone(),
                    shape: t.shape.clone(),
                    len: t.data.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameter store serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let store = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        store.validate()?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn json_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("layer.w", Tensor { shape: vec![n], data: values.clone() });
            store.insert("layer.b", Tensor { shape: vec![1, 1], data: vec![values[0]] });
            let back = ParamStore::from_json(&store.to_json()).unwrap();
            for (a, b) in back.get("layer.w").unwrap().data.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, store);
        }
    }

    #[test]
    fn validate_catches_bad_shape() {
        let store = ParamStore::from_json(r#"{"w":{"shape":[2,2],"data":[1.0,2.0]}}"#).unwrap();
        assert!(matches!(store.validate(), Err(Error::ParamShape { .. })));
        assert!(ParamStore::from_json(r#"{"w":{"shape":[1],"data":[1.0],"x":1}}"#).is_err());
    }

    #[test]
    fn subset_and_arithmetic() {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor { shape: vec![2], data: vec![1.0, 2.0] });
        s.insert("b.w", Tensor { shape: vec![1], data: vec![3.0] });
        assert_eq!(s.subset("a.").len(), 1);
        let g = s.clone();
        s.add_scaled(&g, -1.0);
        assert_eq!(s.l2_norm(), 0.0);
        assert!(s.get("missing").is_err());
    }
}
