use rand::Rng;

use super::{initialize, Mode};
use crate::error::{Error, Result};
use crate::nn::{Activation, BlockTape, Conv2d, ConvBlock, ConvLayer, ConvTranspose2d, Module, Slot};
use crate::tensor::{ImageBatch, MaskBatch, MaskKind, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Side length of the square input.
    pub image_size: usize,
    /// Output channels of each encoder layer; the decoder mirrors them.
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub leaky_slope: f32,
    pub bottleneck_activation: Activation,
    pub output_activation: Activation,
    pub skip_connections: bool,
    /// Dropout probability realizing the noise input in training mode.
    pub noise_dropout_p: f32,
    /// How many leading decoder layers carry dropout.
    pub dropout_decoder_layers: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: 256,
            encoder_channels: vec![64, 128, 256, 512, 512, 512, 512, 512],
            kernel: 4,
            stride: 2,
            padding: 1,
            leaky_slope: 0.2,
            bottleneck_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
            skip_connections: true,
            noise_dropout_p: 0.5,
            dropout_decoder_layers: 3,
        }
    }
}

impl GeneratorConfig {
    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad(format!(
                "generator.encoder_channels must be non-empty and positive, got {:?}",
                self.encoder_channels
            ));
        }
        if self.kernel == 0 || self.stride == 0 {
            return bad("generator kernel and stride must be positive".into());
        }
        let probe = Conv2d::new(1, 1, self.kernel, self.stride, self.padding);
        let mut size = self.image_size;
        for (i, _) in self.encoder_channels.iter().enumerate() {
            size = match probe.output_size(size) {
                Some(s) => s,
                None => return bad(format!("generator encoder layer {} collapses the {}px input", i + 1, self.image_size)),
            };
        }
        if size != 1 {
            return bad(format!(
                "{} encoder layers take {}px to {size}px, not to a 1×1 bottleneck",
                self.depth(),
                self.image_size
            ));
        }
        let mut back = 1;
        let up = ConvTranspose2d::new(1, 1, self.kernel, self.stride, self.padding);
        for _ in 0..self.depth() {
            back = up.output_size(back).unwrap_or(0);
        }
        if back != self.image_size {
            return bad(format!(
                "decoder would produce {back}px instead of {}px",
                self.image_size
            ));
        }
        if !(0.0..1.0).contains(&self.noise_dropout_p) {
            return bad(format!("generator.noise_dropout_p must be in [0, 1), got {}", self.noise_dropout_p));
        }
        if self.dropout_decoder_layers >= self.depth() {
            return bad(format!(
                "generator.dropout_decoder_layers must be below the depth {}",
                self.depth()
            ));
        }
        if self.output_activation != Activation::Sigmoid {
            return bad("generator output activation must be sigmoid".into());
        }
        if self.leaky_slope <= 0.0 {
            return bad("generator.leaky_slope must be positive".into());
        }
        Ok(())
    }

    /// `(in, out)` channels of each decoder layer.
    pub fn decoder_channels(&self) -> Vec<(usize, usize)> {
        let enc = &self.encoder_channels;
        let depth = enc.len();
        (0..depth)
            .map(|j| {
                let cin = if j == 0 {
                    enc[depth - 1]
                } else {
                    let prev = enc[depth - 1 - j];
                    if self.skip_connections {
                        prev + enc[depth - 1 - j]
                    } else {
                        prev
                    }
                };
                let cout = if j + 1 == depth { 1 } else { enc[depth - 2 - j] };
                (cin, cout)
            })
            .collect()
    }
}

/// Encoder–decoder generator with channel-concatenation skips.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    encoder: Vec<ConvBlock<Conv2d>>,
    decoder: Vec<ConvBlock<ConvTranspose2d>>,
}

/// Activations saved by a training-mode forward.
pub struct GeneratorTape {
    encoder: Vec<BlockTape>,
    decoder: Vec<BlockTape>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let depth = cfg.depth();
        let (k, s, p) = (cfg.kernel, cfg.stride, cfg.padding);
        let leaky = Activation::LeakyRelu(cfg.leaky_slope);
        let mut encoder = Vec::with_capacity(depth);
        let mut cin = 3;
        for (i, &cout) in cfg.encoder_channels.iter().enumerate() {
            let act = if i + 1 == depth { cfg.bottleneck_activation } else { leaky };
            encoder.push(ConvBlock::new(Conv2d::new(cin, cout, k, s, p), i > 0, act, 0.0));
            cin = cout;
        }
        let decoder = cfg
            .decoder_channels()
            .into_iter()
            .enumerate()
            .map(|(j, (cin, cout))| {
                let last = j + 1 == depth;
                let act = if last { cfg.output_activation } else { leaky };
                let drop = if j < cfg.dropout_decoder_layers { cfg.noise_dropout_p } else { 0.0 };
                ConvBlock::new(ConvTranspose2d::new(cin, cout, k, s, p), !last, act, drop)
            })
            .collect();
        let mut g = Generator { cfg, encoder, decoder };
        initialize(&mut g, seed);
        Ok(g)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    fn check_input(&self, x: &ImageBatch) -> Result<()> {
        if x.size() != self.cfg.image_size {
            return Err(Error::Shape(format!(
                "generator expects {s}×{s} inputs, got {:?}",
                x.tensor().shape(),
                s = self.cfg.image_size
            )));
        }
        Ok(())
    }

    fn to_mask(&self, y: Tensor) -> Result<MaskBatch> {
        if !y.is_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }
        MaskBatch::new(y, MaskKind::Soft)
    }

    /// Eval mode: dropout off, batch norm on running statistics.
    pub fn forward_eval(&self, x: &ImageBatch) -> Result<MaskBatch> {
        let outs = self.forward_eval_with(x, None)?;
        self.to_mask(outs.into_iter().last().expect("decoder is non-empty"))
    }

    /// Eval forward that returns every decoder layer's output. When
    /// `ablate_skip` names an encoder layer, its activations are zeroed on
    /// the skip path only.
    pub fn forward_eval_with(&self, x: &ImageBatch, ablate_skip: Option<usize>) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let depth = self.cfg.depth();
        let mut skips: Vec<Tensor> = Vec::with_capacity(depth);
        let mut h = x.tensor().clone();
        for block in &self.encoder {
            h = block.forward_eval(&h)?;
            skips.push(h.clone());
        }
        if let Some(k) = ablate_skip {
            if let Some(s) = skips.get_mut(k) {
                s.fill(0.0);
            }
        }
        let mut outs = Vec::with_capacity(depth);
        for (j, block) in self.decoder.iter().enumerate() {
            if j > 0 && self.cfg.skip_connections {
                h = Tensor::concat_channels(&h, &skips[depth - 1 - j])?;
            }
            h = block.forward_eval(&h)?;
            outs.push(h.clone());
        }
        Ok(outs)
    }

    /// Training forward: dropout active, batch statistics, running statistics updated.
    pub fn forward_train(&mut self, x: &ImageBatch, rng: &mut impl Rng) -> Result<(MaskBatch, GeneratorTape)> {
        self.check_input(x)?;
        let depth = self.cfg.depth();
        let mut enc_tapes = Vec::with_capacity(depth);
        let mut skips: Vec<Tensor> = Vec::with_capacity(depth);
        let mut h = x.tensor().clone();
        for block in self.encoder.iter_mut() {
            let (y, tape) = block.forward_train(h, rng, true)?;
            enc_tapes.push(tape);
            skips.push(y.clone());
            h = y;
        }
        let mut dec_tapes = Vec::with_capacity(depth);
        for (j, block) in self.decoder.iter_mut().enumerate() {
            if j > 0 && self.cfg.skip_connections {
                h = Tensor::concat_channels(&h, &skips[depth - 1 - j])?;
            }
            let (y, tape) = block.forward_train(h, rng, true)?;
            dec_tapes.push(tape);
            h = y;
        }
        let out = self.to_mask(h)?;
        Ok((
            out,
            GeneratorTape {
                encoder: enc_tapes,
                decoder: dec_tapes,
            },
        ))
    }

    pub fn forward(&mut self, x: &ImageBatch, mode: Mode, rng: &mut impl Rng) -> Result<MaskBatch> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.forward_train(x, rng).map(|(m, _)| m),
        }
    }

    /// Accumulates parameter gradients given `d_output = ∂L/∂mask`.
    pub fn backward(&mut self, tape: &GeneratorTape, d_output: Tensor) -> Result<()> {
        let depth = self.cfg.depth();
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        let mut dh = d_output;
        for j in (0..depth).rev() {
            let dx = self.decoder[j]
                .backward(&tape.decoder[j], dh, true, true)?
                .expect("input gradient requested");
            if j > 0 && self.cfg.skip_connections {
                let prev_c = self.decoder[j - 1].conv.out_channels();
                let (dprev, dskip) = dx.split_channels(prev_c)?;
                skip_grads[depth - 1 - j] = Some(dskip);
                dh = dprev;
            } else {
                dh = dx;
            }
        }
        for k in (0..depth).rev() {
            if let Some(g) = skip_grads[k].take() {
                dh.add_assign(&g);
            }
            match self.encoder[k].backward(&tape.encoder[k], dh, k > 0, true)? {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        Ok(())
    }
}

impl Module for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        let base = crate::nn::join(prefix, "generator");
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("{base}.enc{}", i + 1), f);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("{base}.dec{}", i + 1), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        let base = crate::nn::join(prefix, "generator");
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("{base}.enc{}", i + 1), f);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("{base}.dec{}", i + 1), f);
        }
    }
}
