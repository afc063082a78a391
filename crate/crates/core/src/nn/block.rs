use rand::Rng;

use super::{join, Activation, BatchNorm2d, BnCache, ConvLayer, Slot};
use crate::error::Result;
use crate::tensor::Tensor;

/// convolution → optional batch norm → activation → optional dropout.
#[derive(Clone, Debug)]
pub struct ConvBlock<C> {
    pub conv: C,
    pub norm: Option<BatchNorm2d>,
    pub activation: Activation,
    /// Drop probability used in training mode; `0` disables dropout.
    pub dropout: f32,
}

/// What a training-mode forward keeps for the backward pass.
#[derive(Clone, Debug)]
pub struct BlockTape {
    input: Tensor,
    norm: Option<BnCache>,
    activated: Tensor,
    keep: Option<Vec<f32>>,
}

impl<C: ConvLayer> ConvBlock<C> {
    pub fn new(conv: C, norm: bool, activation: Activation, dropout: f32) -> Self {
        let norm = norm.then(|| BatchNorm2d::new(conv.out_channels()));
        ConvBlock {
            conv,
            norm,
            activation,
            dropout,
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        if let Some(bn) = &self.norm {
            y = bn.forward_eval(&y)?;
        }
        self.activation.forward_in_place(&mut y);
        Ok(y)
    }

    pub fn forward_train(
        &mut self,
        x: Tensor,
        rng: &mut impl Rng,
        update_running: bool,
    ) -> Result<(Tensor, BlockTape)> {
        let mut y = self.conv.forward(&x)?;
        let mut norm_cache = None;
        if let Some(bn) = self.norm.as_mut() {
            let (normed, cache) = bn.forward_train(&y, update_running)?;
            y = normed;
            norm_cache = Some(cache);
        }
        self.activation.forward_in_place(&mut y);
        let activated = y.clone();
        let keep = if self.dropout > 0.0 {
            let scale = 1.0 / (1.0 - self.dropout);
            let keep: Vec<f32> = (0..y.numel())
                .map(|_| {
                    if rng.random::<f32>() < self.dropout {
                        0.0
                    } else {
                        scale
                    }
                })
                .collect();
            y.data_mut().iter_mut().zip(&keep).for_each(|(v, k)| *v *= k);
            Some(keep)
        } else {
            None
        };
        Ok((
            y,
            BlockTape {
                input: x,
                norm: norm_cache,
                activated,
                keep,
            },
        ))
    }

    pub fn backward(
        &mut self,
        tape: &BlockTape,
        mut dy: Tensor,
        need_dx: bool,
        need_dw: bool,
    ) -> Result<Option<Tensor>> {
        if let Some(keep) = &tape.keep {
            dy.data_mut().iter_mut().zip(keep).for_each(|(g, k)| *g *= k);
        }
        self.activation.backward_in_place(&tape.activated, &mut dy);
        if let (Some(bn), Some(cache)) = (self.norm.as_mut(), tape.norm.as_ref()) {
            dy = bn.backward(cache, &dy, need_dw)?;
        }
        self.conv.backward(&tape.input, &dy, need_dx, need_dw)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        self.conv.visit(&join(prefix, "conv"), f);
        if let Some(bn) = &self.norm {
            bn.visit(&join(prefix, "bn"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        if let Some(bn) = self.norm.as_mut() {
            bn.visit_mut(&join(prefix, "bn"), f);
        }
    }
}
