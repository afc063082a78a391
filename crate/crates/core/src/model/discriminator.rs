use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::initialize;
use crate::error::{Error, Result};
use crate::nn::{Activation, BlockTape, Conv2d, ConvBlock, ConvLayer, Module, Slot};
use crate::tensor::{ImageBatch, MaskBatch, ScoreMap, Tensor};

/// Scores are kept strictly inside `(0, 1)` even when the sigmoid saturates in `f32`.
const SCORE_FLOOR: f32 = f32::MIN_POSITIVE;
const SCORE_CEIL: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    /// Output channels of the five convolutions; the last must be 1.
    pub layer_channels: Vec<usize>,
    pub kernel: usize,
    pub strides: Vec<usize>,
    pub padding: usize,
    pub leaky_slope: f32,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            image_size: 256,
            layer_channels: vec![64, 128, 256, 512, 1],
            kernel: 4,
            strides: vec![2, 2, 2, 1, 1],
            padding: 1,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub const LAYERS: usize = 5;
    /// Three image channels plus the mask.
    pub const INPUT_CHANNELS: usize = 4;

    pub fn validate(&self) -> Result<()> {
        self.output_size().map(|_| ())
    }

    /// Side of the square score map produced for an `image_size` input.
    pub fn output_size(&self) -> Result<usize> {
        let bad = |m: String| Err(Error::Config(m));
        if self.layer_channels.len() != Self::LAYERS || self.strides.len() != Self::LAYERS {
            return bad(format!(
                "discriminator needs exactly {} layers, got {} channel entries and {} strides",
                Self::LAYERS,
                self.layer_channels.len(),
                self.strides.len()
            ));
        }
        if self.layer_channels.last() != Some(&1) || self.layer_channels.contains(&0) {
            return bad(format!(
                "discriminator channels must be positive and end in 1, got {:?}",
                self.layer_channels
            ));
        }
        if self.kernel == 0 || self.strides.contains(&0) {
            return bad("discriminator kernel and strides must be positive".into());
        }
        if self.leaky_slope <= 0.0 {
            return bad("discriminator.leaky_slope must be positive".into());
        }
        let mut size = self.image_size;
        for (i, &s) in self.strides.iter().enumerate() {
            size = match Conv2d::new(1, 1, self.kernel, s, self.padding).output_size(size) {
                Some(v) => v,
                None => return bad(format!("discriminator layer {} has an empty output", i + 1)),
            };
        }
        Ok(size)
    }
}

/// Five-layer convolutional patch discriminator over `(image ‖ mask)`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
    layers: Vec<ConvBlock<Conv2d>>,
}

pub struct DiscriminatorTape {
    layers: Vec<BlockTape>,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut cin = DiscriminatorConfig::INPUT_CHANNELS;
        let n = cfg.layer_channels.len();
        let layers = cfg
            .layer_channels
            .iter()
            .zip(&cfg.strides)
            .enumerate()
            .map(|(i, (&cout, &stride))| {
                let last = i + 1 == n;
                let act = if last {
                    Activation::Sigmoid
                } else {
                    Activation::LeakyRelu(cfg.leaky_slope)
                };
                let block = ConvBlock::new(
                    Conv2d::new(cin, cout, cfg.kernel, stride, cfg.padding),
                    i > 0 && !last,
                    act,
                    0.0,
                );
                cin = cout;
                block
            })
            .collect();
        let mut d = Discriminator { cfg, layers };
        initialize(&mut d, seed);
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    fn joined_input(&self, x: &ImageBatch, m: &MaskBatch) -> Result<Tensor> {
        if x.batch_size() != m.batch_size() {
            return Err(Error::Shape(format!(
                "image batch has {} samples but mask batch has {}",
                x.batch_size(),
                m.batch_size()
            )));
        }
        if x.size() != self.cfg.image_size || m.size() != self.cfg.image_size {
            return Err(Error::Shape(format!(
                "discriminator expects {s}×{s} inputs, got {:?} and {:?}",
                x.tensor().shape(),
                m.tensor().shape(),
                s = self.cfg.image_size
            )));
        }
        Tensor::concat_channels(x.tensor(), m.tensor())
    }

    fn to_scores(mut y: Tensor) -> Result<ScoreMap> {
        if !y.is_finite() {
            return Err(Error::NonFinite("discriminator scores".into()));
        }
        y.data_mut()
            .iter_mut()
            .for_each(|v| *v = v.clamp(SCORE_FLOOR, SCORE_CEIL));
        ScoreMap::new(y)
    }

    pub fn forward_eval(&self, x: &ImageBatch, m: &MaskBatch) -> Result<ScoreMap> {
        let mut h = self.joined_input(x, m)?;
        for block in &self.layers {
            h = block.forward_eval(&h)?;
        }
        Self::to_scores(h)
    }

    /// Batch-statistics forward. `update_running` controls whether batch-norm
    /// running statistics move, so the generator half-step can leave the
    /// discriminator untouched.
    pub fn forward_train(
        &mut self,
        x: &ImageBatch,
        m: &MaskBatch,
        update_running: bool,
    ) -> Result<(ScoreMap, DiscriminatorTape)> {
        let mut h = self.joined_input(x, m)?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        // No dropout in the discriminator, so the rng is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for block in self.layers.iter_mut() {
            let (y, tape) = block.forward_train(h, &mut rng, update_running)?;
            tapes.push(tape);
            h = y;
        }
        Ok((Self::to_scores(h)?, DiscriminatorTape { layers: tapes }))
    }

    /// Backpropagates `∂L/∂scores`; returns `∂L/∂input` (`B×4×S×S`).
    /// Parameter gradients accumulate only when `need_dw`.
    pub fn backward(&mut self, tape: &DiscriminatorTape, d_scores: Tensor, need_dw: bool) -> Result<Tensor> {
        let mut dh = d_scores;
        for (block, t) in self.layers.iter_mut().zip(&tape.layers).rev() {
            dh = block
                .backward(t, dh, true, need_dw)?
                .expect("input gradient requested");
        }
        Ok(dh)
    }

    /// Gradient with respect to the mask channel of a joined-input gradient.
    pub fn mask_gradient(d_input: &Tensor) -> Result<Tensor> {
        Ok(d_input.split_channels(3)?.1)
    }
}

impl Module for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        let base = crate::nn::join(prefix, "discriminator");
        for (i, b) in self.layers.iter().enumerate() {
            b.visit(&format!("{base}.layer{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        let base = crate::nn::join(prefix, "discriminator");
        for (i, b) in self.layers.iter_mut().enumerate() {
            b.visit_mut(&format!("{base}.layer{}", i + 1), f);
        }
    }
}
