//! Adversarial objectives.
//!
//! Every term is a mean over all elements of its map (batch and spatial
//! positions alike), so `lambda` does not depend on batch size. Scores are
//! clamped to `[eps, 1 − eps]` before taking logarithms.

use crate::error::{Error, Result};
use crate::tensor::{MaskBatch, ScoreMap, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the L1 term in the generator objective.
    pub lambda: f64,
    pub log_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 100.0,
            log_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("loss.lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.log_epsilon > 0.0 && self.log_epsilon < 1e-3) {
            return Err(Error::Config(format!(
                "loss.log_epsilon must be in (0, 1e-3), got {}",
                self.log_epsilon
            )));
        }
        Ok(())
    }

    fn clamp(&self, s: f32) -> f64 {
        (s as f64).clamp(self.log_epsilon, 1.0 - self.log_epsilon)
    }
}

/// `total = adversarial + lambda · l1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLoss {
    pub total: f64,
    pub adversarial: f64,
    /// Mean absolute error, before weighting.
    pub l1: f64,
    pub lambda: f64,
}

/// `total = real + fake`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscriminatorLoss {
    pub total: f64,
    pub real: f64,
    pub fake: f64,
}

impl GeneratorLoss {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.adversarial.is_finite() && self.l1.is_finite()
    }
}

impl DiscriminatorLoss {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.real.is_finite() && self.fake.is_finite()
    }
}

/// Gradients of the generator objective.
#[derive(Clone, Debug)]
pub struct GeneratorLossGrad {
    pub d_scores: Tensor,
    pub d_pred: Tensor,
}

/// Gradients of the discriminator objective.
#[derive(Clone, Debug)]
pub struct DiscriminatorLossGrad {
    pub d_real: Tensor,
    pub d_fake: Tensor,
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `mean(−log D(x, G(x))) + λ · mean(|y − G(x)|)`.
pub fn generator_loss(
    scores_fake: &ScoreMap,
    pred: &MaskBatch,
    gt: &MaskBatch,
    cfg: &LossConfig,
) -> Result<GeneratorLoss> {
    generator_loss_with_grad(scores_fake, pred, gt, cfg).map(|(l, _)| l)
}

pub fn generator_loss_with_grad(
    scores_fake: &ScoreMap,
    pred: &MaskBatch,
    gt: &MaskBatch,
    cfg: &LossConfig,
) -> Result<(GeneratorLoss, GeneratorLossGrad)> {
    cfg.validate()?;
    let (s, p, y) = (scores_fake.tensor(), pred.tensor(), gt.tensor());
    same_shape(p, y, "generator loss prediction/ground truth")?;
    if s.shape()[0] != p.shape()[0] {
        return Err(Error::Shape("generator loss: score and mask batch sizes differ".into()));
    }
    let ns = s.numel() as f64;
    let mut adversarial = 0.0;
    let mut d_scores = Tensor::zeros(s.shape());
    for (g, &v) in d_scores.data_mut().iter_mut().zip(s.data()) {
        let c = cfg.clamp(v);
        adversarial -= c.ln();
        *g = (-1.0 / (ns * c)) as f32;
    }
    adversarial /= ns;

    let np = p.numel() as f64;
    let mut l1 = 0.0;
    let mut d_pred = Tensor::zeros(p.shape());
    let scale = cfg.lambda / np;
    for ((g, &pv), &yv) in d_pred.data_mut().iter_mut().zip(p.data()).zip(y.data()) {
        let diff = pv as f64 - yv as f64;
        l1 += diff.abs();
        *g = (scale * sign(diff)) as f32;
    }
    l1 /= np;
    let loss = GeneratorLoss {
        total: adversarial + cfg.lambda * l1,
        adversarial,
        l1,
        lambda: cfg.lambda,
    };
    Ok((loss, GeneratorLossGrad { d_scores, d_pred }))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `mean(−log D(x, y)) + mean(−log(1 − D(x, G(x))))`.
pub fn discriminator_loss(
    scores_real: &ScoreMap,
    scores_fake: &ScoreMap,
    cfg: &LossConfig,
) -> Result<DiscriminatorLoss> {
    discriminator_loss_with_grad(scores_real, scores_fake, cfg).map(|(l, _)| l)
}

pub fn discriminator_loss_with_grad(
    scores_real: &ScoreMap,
    scores_fake: &ScoreMap,
    cfg: &LossConfig,
) -> Result<(DiscriminatorLoss, DiscriminatorLossGrad)> {
    cfg.validate()?;
    let (r, f) = (scores_real.tensor(), scores_fake.tensor());
    same_shape(r, f, "discriminator loss real/fake scores")?;
    let n = r.numel() as f64;
    let mut real = 0.0;
    let mut d_real = Tensor::zeros(r.shape());
    for (g, &v) in d_real.data_mut().iter_mut().zip(r.data()) {
        let c = cfg.clamp(v);
        real -= c.ln();
        *g = (-1.0 / (n * c)) as f32;
    }
    let mut fake = 0.0;
    let mut d_fake = Tensor::zeros(f.shape());
    for (g, &v) in d_fake.data_mut().iter_mut().zip(f.data()) {
        let c = cfg.clamp(v);
        fake -= (1.0 - c).ln();
        *g = (1.0 / (n * (1.0 - c))) as f32;
    }
    real /= n;
    fake /= n;
    Ok((
        DiscriminatorLoss {
            total: real + fake,
            real,
            fake,
        },
        DiscriminatorLossGrad { d_real, d_fake },
    ))
}
