//! Dense f64 tensors and a small reverse-mode differentiation tape that
//! covers exactly the kernels the fusion networks use.

mod checkpoint;
mod kernels;
mod optim;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};

/// Row-major n-dimensional array of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Returns the single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Extents of a C×H×W tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::invalid(format!("expected C×H×W, got {:?}", self.shape))),
        }
    }

    /// Per-pixel argmax over the channel axis of a C×H×W tensor.
    pub fn argmax_channels(&self) -> Result<Vec<usize>> {
        let (c, h, w) = self.chw()?;
        let plane = h * w;
        Ok((0..plane)
            .map(|i| {
                let mut best = 0;
                for k in 1..c {
                    if self.data[k * plane + i] > self.data[best * plane + i] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    /// Mirrors the last axis.
    pub fn flip_last_axis(&self) -> Tensor {
        let w = *self.shape.last().expect("non-empty shape");
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(w) {
            row.reverse();
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }
}
