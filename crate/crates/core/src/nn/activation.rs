use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::LeakyRelu(slope) => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    pub fn forward_in_place(self, t: &mut Tensor) {
        t.data_mut().iter_mut().for_each(|v| *v = self.apply(*v));
    }

    /// Derivative expressed through the activation's output, which is all the tape keeps.
    pub fn derivative_from_output(self, out: f32) -> f32 {
        match self {
            Activation::LeakyRelu(slope) => {
                if out > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }

    pub fn backward_in_place(self, output: &Tensor, grad: &mut Tensor) {
        for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
            *g *= self.derivative_from_output(o);
        }
    }
}
