//! Named real-valued parameters and matching gradient accumulators.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Row-major tensor of rank 0, 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(x: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Option<Self> {
        (shape.iter().product::<usize>() == data.len()).then_some(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Proposal parameters θ.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn with(mut self, name: impl Into<String>, value: Tensor) -> Self {
        self.insert(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, ParamError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, ParamError> {
        let t = self.get(name)?;
        if !t.shape.is_empty() {
            return Err(ParamError::Shape {
                name: name.to_owned(),
                expected: Vec::new(),
                actual: t.shape.clone(),
            });
        }
        Ok(t.data[0])
    }

    pub fn data(&self, name: &str) -> Result<&[f64], ParamError> {
        self.get(name).map(Tensor::data)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar coordinates.
    pub fn num_coordinates(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Coordinates flattened in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`]; `coords` must have `num_coordinates()` entries.
    pub fn set_flat(&mut self, coords: &[f64]) {
        assert_eq!(coords.len(), self.num_coordinates());
        let mut offset = 0;
        for t in self.entries.values_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&coords[offset..offset + n]);
            offset += n;
        }
    }

    /// `self += step * grads`, coordinate-wise.
    pub fn add_scaled(&mut self, grads: &Gradients, step: f64) {
        for (name, t) in self.entries.iter_mut() {
            if let Some(g) = grads.entries.get(name) {
                for (x, dx) in t.data.iter_mut().zip(g.data.iter()) {
                    *x += step * dx;
                }
            }
        }
    }
}

/// Gradient accumulator with the same names and shapes as a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    entries: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            entries: params
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(&t.shape)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, ParamError> {
        self.entries
            .get(name)
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64], ParamError> {
        self.entries
            .get_mut(name)
            .map(|t| t.data.as_mut_slice())
            .ok_or_else(|| ParamError::Unknown(name.to_owned()))
    }

    /// Adds `value` to coordinate `index` of parameter `name`.
    pub fn add(&mut self, name: &str, index: usize, value: f64) -> Result<(), ParamError> {
        self.slice_mut(name)?[index] += value;
        Ok(())
    }

    pub fn add_slice(&mut self, name: &str, values: &[f64]) -> Result<(), ParamError> {
        let dst = self.slice_mut(name)?;
        if dst.len() != values.len() {
            return Err(ParamError::Shape {
                name: name.to_owned(),
                expected: vec![dst.len()],
                actual: vec![values.len()],
            });
        }
        for (d, v) in dst.iter_mut().zip(values) {
            *d += v;
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (name, t) in self.entries.iter_mut() {
            if let Some(o) = other.entries.get(name) {
                for (x, y) in t.data.iter_mut().zip(o.data.iter()) {
                    *x += scale * y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            for x in t.data.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries
            .values()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// True if every coordinate is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.entries.values().all(|t| t.data.iter().all(|x| *x == 0.0))
    }
}
