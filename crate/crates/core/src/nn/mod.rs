//! Layer primitives with hand-written backward passes.
//!
//! Every layer keeps its learnable tensors in [`Param`]s (value plus
//! accumulated gradient). Forward passes in training mode return a tape that
//! the matching backward pass consumes.

mod activation;
mod block;
mod conv;
mod gemm;
mod norm;

pub use activation::Activation;
pub use block::{BlockTape, ConvBlock};
pub use conv::{Conv2d, ConvLayer, ConvTranspose2d};
pub use norm::{BatchNorm2d, BnCache};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// A learnable tensor and its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        Param {
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
        }
    }

    pub fn fill_normal(&mut self, rng: &mut impl Rng, mean: f32, std: f32) {
        let dist = Normal::new(mean, std).expect("std must be finite and non-negative");
        for v in self.value.data_mut() {
            *v = dist.sample(rng);
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Mutable view onto one named tensor of a module.
pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Tensor),
}

/// Anything that owns named parameters and buffers.
///
/// Visit order is fixed by construction; optimizers and checkpoints rely on it.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }

    /// Number of learnable scalars (batch-norm running statistics excluded).
    fn learnable_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t, learnable| {
            if learnable {
                n += t.numel();
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
