//! Dense f64 tensors and the layer zoo the classifier needs: convolution,
//! batch normalization, ReLU, pooling, linear, softmax cross-entropy, an
//! Adam optimizer, and a finite-difference gradient checker.
//!
//! There is no autodiff tape. Every layer exposes an explicit forward that
//! returns a cache and an explicit backward that consumes it; the model
//! module composes them. Double precision throughout. Every op checks its
//! output for NaN/Inf and fails rather than propagate one.

mod adam;
mod checkpoint;
mod gradcheck;
mod ops;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, max_rel_error, numeric_gradient};
pub use ops::{
    avg_pool2d_backward, avg_pool2d_forward, batch_norm_backward, batch_norm_forward,
    conv2d_backward, conv2d_forward, global_avg_pool_backward, global_avg_pool_forward,
    linear_backward, linear_forward, max_pool2d_backward, max_pool2d_forward,
    max_pool2d_forward_padded, relu_backward, relu_forward, softmax_cross_entropy,
    softmax_cross_entropy_backward, softmax_rows,
    AvgPoolCache, BnCache, BnMode, ConvCache, LinearCache, MaxPoolCache, ReluCache, SoftmaxCache,
};

use crate::error::Error;
use crate::Result;

/// Row-major dense tensor with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?} (needs {len})",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient accumulator, allocated zero on first touch.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        let g = self.grad_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (a, b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_finite(self, op: &str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }
}

/// Trainable tensor: value, gradient, and Adam moment state.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let len = value.len();
        Parameter {
            name: name.into(),
            value,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}
