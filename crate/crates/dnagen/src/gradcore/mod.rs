//! Dense-tensor reverse-mode autodiff engine with double-backward support.
//!
//! Every model and design loop in this crate builds on the [`Tape`]. Values
//! are eagerly evaluated 64-bit tensors; the tape records enough structure
//! that [`grad`] can emit gradients as new tape nodes, so gradients of
//! gradients (needed for the discriminator's gradient penalty) come for free.

mod adam;
mod tape;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use tape::{grad, PadSpec, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value entering the graph ({0})")]
    NonFinite(String),
    #[error("graph error: {0}")]
    Graph(String),
}

/// Dense row-major 64-bit tensor. Plain value, not attached to any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, GradError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(GradError::Dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(GradError::NonFinite(format!("{bad}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GradError> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Value at (row, col) of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Length of the leading axis; remaining axes flattened give `row_width`.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn row_width(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }
}
