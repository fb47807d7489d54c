//! Minimal dense tensor engine: forward ops, a recording graph with
//! reverse-mode gradients, SGD, and the binary checkpoint format.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod optim;
pub mod serialize;

pub use graph::{BackwardReport, ConvAlgo, Graph, NodeId};
pub use optim::{clip_grad_norm, Sgd};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense row-major 32-bit tensor. 4-D tensors use N, C, H, W order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor construction",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    /// Gaussian initialization with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f32, std.max(0.0)).expect("finite std");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
            grad: None,
        }
    }

    /// Stacks equally shaped tensors along a new leading batch axis, or
    /// concatenates along an existing leading axis of 4-D tensors.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack an empty batch".into()))?;
        let mut inner = first.shape.clone();
        if inner.len() == 4 {
            inner.remove(0);
        }
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut total = 0;
        for t in items {
            let (l, rest) = if t.shape.len() == 4 {
                (t.shape[0], &t.shape[1..])
            } else {
                (1, &t.shape[..])
            };
            if rest != inner.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            total += l;
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![total];
        shape.extend_from_slice(&inner);
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f32>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::ShapeMismatch {
                    op: "set_grad",
                    lhs: self.shape.clone(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One sample of a 4-D batch, keeping a leading extent of 1.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        if self.shape.len() != 4 || n >= self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "batch index {n} out of range for shape {:?}",
                self.shape
            )));
        }
        let per = self.numel() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(shape, self.data[n * per..(n + 1) * per].to_vec())
    }
}
