//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable values. A [`Tape`] records primitive operations
//! eagerly: whenever an operand of a primitive is tracked, the result is
//! tracked on the same tape. [`Tensor::backward`] on a scalar then fills in
//! gradients for every tracked tensor, visiting each tape node exactly once
//! in reverse order. All arithmetic is 64-bit; reductions run in index order
//! so repeated runs are bit-identical.

mod gradcheck;
mod ops;
mod tape;
#[cfg(test)]
mod tests;

pub use gradcheck::{grad_check, grad_check_named};
pub use tape::Tape;

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use tape::NodeRef;

/// Dense row-major f64 tensor, optionally attached to a differentiation tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<[f64]>,
    node: Option<NodeRef>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("tracked", &self.node.is_some())
            .field("data", &&self.data[..self.data.len().min(8)])
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape,
            data: data.into(),
            node: None,
        })
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![v].into(),
            node: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel].into(),
            node: None,
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; numel].into(),
            node: None,
        }
    }

    pub fn ones(shape: Vec<usize>) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data: data.into(),
            node: None,
        }
    }

    pub fn randn(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.normal()).collect();
        Tensor {
            shape,
            data: data.into(),
            node: None,
        }
    }

    /// Truncated-normal init (rejection within two standard deviations).
    pub fn trunc_normal(shape: Vec<usize>, sigma: f64, rng: &mut Rng) -> Tensor {
        let numel = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.trunc_normal(sigma)).collect();
        Tensor {
            shape,
            data: data.into(),
            node: None,
        }
    }

    /// Kaiming-uniform init for a `[fan_in, fan_out]` weight matrix with
    /// leaky-relu slope parameter `a`.
    pub fn kaiming_uniform(fan_in: usize, fan_out: usize, a: f64, rng: &mut Rng) -> Tensor {
        let bound = (6.0 / ((1.0 + a * a) * fan_in as f64)).sqrt();
        let data: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Tensor {
            shape: vec![fan_in, fan_out],
            data: data.into(),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value of a single-element tensor.
    ///
    /// Panics when the tensor holds more than one value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Same values, detached from any tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    /// Gradient recorded by the last `backward()` on this tensor's tape.
    /// `None` when untracked or when the tensor did not contribute to the loss.
    pub fn grad(&self) -> Option<Tensor> {
        let node = self.node.as_ref()?;
        let g = node.tape.grad_of(node.id)?;
        Some(Tensor {
            shape: self.shape.clone(),
            data: g.into(),
            node: None,
        })
    }

    /// Gradient as above, with zeros when no gradient reached this tensor.
    pub fn grad_or_zeros(&self) -> Tensor {
        self.grad().unwrap_or_else(|| Tensor::zeros(self.shape.clone()))
    }

    /// Backpropagate from a scalar loss through its tape.
    pub fn backward(&self) -> Result<()> {
        let node = self.node.as_ref().ok_or(Error::DetachedTape)?;
        if self.numel() != 1 {
            return Err(Error::LossNotScalar {
                shape: self.shape.clone(),
            });
        }
        node.tape.run_backward(node.id);
        Ok(())
    }

    pub(crate) fn data_rc(&self) -> Rc<[f64]> {
        Rc::clone(&self.data)
    }

    pub(crate) fn node_ref(&self) -> Option<&NodeRef> {
        self.node.as_ref()
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Rc<[f64]>, node: Option<NodeRef>) -> Tensor {
        Tensor { shape, data, node }
    }
}
