//! Dense f64 arrays and a reverse-mode differentiation tape.
//!
//! A [`Tensor`] is an immutable value. Differentiable computations are recorded
//! on a [`Tape`]; [`Tape::backward`] walks the record in reverse and returns a
//! [`Gradients`] map covering every leaf.

mod checkpoint;
mod tape;

pub use checkpoint::{ParamStore, CHECKPOINT_MAGIC};
pub use tape::{Gradients, NodeId, Op, Tape};

use crate::error::{bail, Result};

/// Row-major dense array of finite f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            bail!(Shape, "shape {shape:?} has a zero dimension");
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            bail!(
                Shape,
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            );
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            bail!(Domain, "non-finite value {} at flat index {pos}", data[pos]);
        }
        Ok(Self { shape, data })
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            bail!(EmptyInput, "vector with no elements");
        }
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            bail!(EmptyInput, "matrix with no rows");
        };
        let cols = first.len();
        if rows.iter().any(|r| r.len() != cols) {
            bail!(Shape, "ragged rows");
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; numel])
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            bail!(Shape, "item() on tensor of shape {:?}", self.shape);
        }
        Ok(self.data[0])
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        if self.shape.len() != 2 || i >= self.shape[0] {
            bail!(Shape, "row {i} of tensor with shape {:?}", self.shape);
        }
        let cols = self.shape[1];
        Ok(Self::from_parts(
            vec![cols],
            self.data[i * cols..(i + 1) * cols].to_vec(),
        ))
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
