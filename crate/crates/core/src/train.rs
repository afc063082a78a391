//! Alternating adversarial training: per batch one discriminator Adam update
//! on the discriminator objective (generator output held constant), then one
//! generator Adam update on the generator objective (discriminator frozen).

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, OptimizerState, RngState};
use crate::data::{batch_order, Batch, LoadedSplit};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss_with_grad, generator_loss_with_grad, DiscriminatorLoss, GeneratorLoss, LossConfig,
};
use crate::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParameterSet};
use crate::nn::Module;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{MaskBatch, MaskKind};

pub const LOG_HEADER: &str = "step,epoch,g_total,g_adv,g_l1,d_total,d_real,d_fake,ms";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub seed: u64,
    /// Checkpoint cadence in epochs; the final epoch is always saved.
    pub checkpoint_every: u64,
    /// Whether the `ms` log column carries wall time. When off it is written
    /// as 0 so that logs from identical runs compare byte for byte.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 4,
            epochs: 200,
            seed: 0,
            checkpoint_every: 10,
            record_time: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Steps per epoch for a split of `n` samples (the last batch may be partial).
    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    /// Shuffle seed for one epoch.
    pub fn epoch_seed(&self, epoch: u64) -> u64 {
        self.seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// 1-based global step.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: u64,
    pub generator: GeneratorLoss,
    pub discriminator: DiscriminatorLoss,
    pub ms: u64,
}

impl StepStats {
    pub fn csv_row(&self) -> String {
        let (g, d) = (&self.generator, &self.discriminator);
        format!(
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            self.step,
            self.epoch,
            g.total,
            g.adversarial,
            g.l1,
            d.total,
            d.real,
            d.fake,
            self.ms
        )
    }
}

/// Which network a half-step just updated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HalfStep {
    Discriminator,
    Generator,
}

/// Both networks, their optimizers and the training counters.
pub struct Trainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    g_opt: Adam,
    d_opt: Adam,
    loss: LossConfig,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    epoch: u64,
    step: u64,
    fingerprint: String,
}

impl Trainer {
    /// Fresh networks seeded from `cfg.seed`.
    pub fn new(
        gcfg: GeneratorConfig,
        dcfg: DiscriminatorConfig,
        loss: LossConfig,
        cfg: TrainConfig,
        fingerprint: String,
    ) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        if gcfg.image_size != dcfg.image_size {
            return Err(Error::Config(format!(
                "generator works at {}px but discriminator at {}px",
                gcfg.image_size, dcfg.image_size
            )));
        }
        let generator = Generator::new(gcfg, cfg.seed)?;
        let discriminator = Discriminator::new(dcfg, cfg.seed.wrapping_add(1))?;
        let g_opt = Adam::new(&generator, cfg.adam())?;
        let d_opt = Adam::new(&discriminator, cfg.adam())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Trainer {
            generator,
            discriminator,
            g_opt,
            d_opt,
            loss,
            cfg,
            rng,
            epoch: 0,
            step: 0,
            fingerprint,
        })
    }

    /// Rebuilds the exact training state stored in `ckpt`. The run settings
    /// that shape the trajectory must match the ones it was saved with.
    pub fn resume(
        gcfg: GeneratorConfig,
        dcfg: DiscriminatorConfig,
        loss: LossConfig,
        cfg: TrainConfig,
        fingerprint: String,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        if ckpt.fingerprint != fingerprint {
            return Err(Error::Config(
                "checkpoint was written under different model/loss/optimizer settings".into(),
            ));
        }
        let mut t = Trainer::new(gcfg, dcfg, loss, cfg, fingerprint)?;
        ckpt.generator.load_into(&mut t.generator)?;
        ckpt.discriminator.load_into(&mut t.discriminator)?;
        t.g_opt.load_state(ckpt.generator_optimizer.step, &ckpt.generator_optimizer.tensors)?;
        t.d_opt.load_state(ckpt.discriminator_optimizer.step, &ckpt.discriminator_optimizer.tensors)?;
        t.rng = ckpt.rng.restore();
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Completed epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Completed steps, equal to the number of generator updates.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generator_updates(&self) -> u64 {
        self.g_opt.step_count()
    }

    pub fn discriminator_updates(&self) -> u64 {
        self.d_opt.step_count()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generator: ParameterSet::from_module(&self.generator),
            discriminator: ParameterSet::from_module(&self.discriminator),
            generator_optimizer: OptimizerState {
                step: self.g_opt.step_count(),
                tensors: self.g_opt.state(),
            },
            discriminator_optimizer: OptimizerState {
                step: self.d_opt.step_count(),
                tensors: self.d_opt.state(),
            },
            epoch: self.epoch,
            step: self.step,
            fingerprint: self.fingerprint.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// One discriminator update followed by one generator update. Losses
    /// are those seen by each network before its own update.
    pub fn training_step(&mut self, batch: &Batch) -> Result<StepStats> {
        self.training_step_inspect(batch, |_, _, _| {})
    }

    /// [`training_step`](Self::training_step) with a callback run after each
    /// half-step, for checking what each update touched.
    pub fn training_step_inspect(
        &mut self,
        batch: &Batch,
        inspect: impl FnMut(HalfStep, &Generator, &Discriminator),
    ) -> Result<StepStats> {
        self.step_inner(batch, inspect).map_err(|e| match e {
            Error::NonFinite(detail) => Error::NonFiniteLoss {
                step: self.step + 1,
                ids: batch.ids.clone(),
                detail,
            },
            other => other,
        })
    }

    fn step_inner(
        &mut self,
        batch: &Batch,
        mut inspect: impl FnMut(HalfStep, &Generator, &Discriminator),
    ) -> Result<StepStats> {
        let start = Instant::now();
        let step = self.step + 1;
        let (x, y) = (&batch.images, &batch.masks);

        let (fake, g_tape) = self.generator.forward_train(x, &mut self.rng)?;
        // Detached copy: the discriminator step never reaches the generator.
        let fake_const = MaskBatch::new(fake.tensor().clone(), MaskKind::Soft)?;

        self.discriminator.zero_grad();
        let (s_real, real_tape) = self.discriminator.forward_train(x, y, true)?;
        let (s_fake, fake_tape) = self.discriminator.forward_train(x, &fake_const, true)?;
        let (d_loss, d_grad) = discriminator_loss_with_grad(&s_real, &s_fake, &self.loss)?;
        if !d_loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {d_loss:?}")));
        }
        self.discriminator.backward(&real_tape, d_grad.d_real, true)?;
        self.discriminator.backward(&fake_tape, d_grad.d_fake, true)?;
        drop((real_tape, fake_tape));
        self.d_opt.step(&mut self.discriminator)?;
        inspect(HalfStep::Discriminator, &self.generator, &self.discriminator);

        self.generator.zero_grad();
        let (s_fake, tape) = self.discriminator.forward_train(x, &fake, false)?;
        let (g_loss, g_grad) = generator_loss_with_grad(&s_fake, &fake, y, &self.loss)?;
        if !g_loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {g_loss:?}")));
        }
        let d_input = self.discriminator.backward(&tape, g_grad.d_scores, false)?;
        let mut d_mask = Discriminator::mask_gradient(&d_input)?;
        d_mask.add_assign(&g_grad.d_pred);
        self.generator.backward(&g_tape, d_mask)?;
        self.g_opt.step(&mut self.generator)?;
        inspect(HalfStep::Generator, &self.generator, &self.discriminator);

        self.step = step;
        Ok(StepStats {
            step,
            epoch: self.epoch + 1,
            generator: g_loss,
            discriminator: d_loss,
            ms: if self.cfg.record_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        })
    }

    /// One pass over `split` in this epoch's shuffled order.
    pub fn train_epoch(&mut self, split: &LoadedSplit, mut on_step: impl FnMut(&StepStats) -> Result<()>) -> Result<()> {
        let epoch = self.epoch + 1;
        let order = batch_order(split.len(), self.cfg.batch_size, true, self.cfg.epoch_seed(epoch))?;
        for idx in order {
            let batch = split.batch(&idx)?;
            let stats = self.training_step(&batch)?;
            on_step(&stats)?;
        }
        self.epoch = epoch;
        Ok(())
    }
}

/// Where a training run writes its log and checkpoints.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub log: PathBuf,
    pub checkpoints: PathBuf,
}

impl RunOutput {
    pub fn in_dir(dir: &Path) -> Self {
        RunOutput {
            log: dir.join("train_log.csv"),
            checkpoints: dir.join("checkpoints"),
        }
    }

    pub fn checkpoint_path(&self, epoch: u64) -> PathBuf {
        self.checkpoints.join(format!("epoch_{epoch:04}.ckpt"))
    }

    /// Creates the checkpoint directory and proves it accepts writes.
    pub fn ensure_writable(&self) -> Result<()> {
        fs::create_dir_all(&self.checkpoints).map_err(|e| Error::io(&self.checkpoints, e))?;
        let probe = self.checkpoints.join(".write_probe");
        fs::write(&probe, b"probe").map_err(|e| Error::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
    }
}

/// Highest-epoch checkpoint in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("epoch_") && name.ends_with(".ckpt")
        })
        .collect();
    found.sort();
    Ok(found.pop())
}

/// Keeps the header and the rows up to `step`, dropping anything logged
/// after the checkpoint a run resumes from.
fn prepare_log(path: &Path, step: u64) -> Result<()> {
    let keep = match fs::read_to_string(path) {
        Ok(text) => {
            let mut out = String::new();
            for line in text.lines() {
                let row_step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
                if line == LOG_HEADER || row_step.is_some_and(|s| s <= step) {
                    out.push_str(line);
                    out.push('\n');
                }
            }
            if out.is_empty() {
                format!("{LOG_HEADER}\n")
            } else {
                out
            }
        }
        Err(_) => format!("{LOG_HEADER}\n"),
    };
    fs::write(path, keep).map_err(|e| Error::io(path, e))
}

/// Trains until `trainer.config().epochs`, appending every step to the CSV
/// log and checkpointing on schedule and after the final epoch.
pub fn train(trainer: &mut Trainer, split: &LoadedSplit, out: &RunOutput) -> Result<Vec<StepStats>> {
    if split.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    out.ensure_writable()?;
    prepare_log(&out.log, trainer.step())?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&out.log)
        .map_err(|e| Error::io(&out.log, e))?;
    let cfg = trainer.config().clone();
    let mut history = Vec::new();
    while trainer.epoch() < cfg.epochs {
        trainer.train_epoch(split, |s| {
            writeln!(log, "{}", s.csv_row()).map_err(|e| Error::io(&out.log, e))?;
            history.push(*s);
            Ok(())
        })?;
        let epoch = trainer.epoch();
        if let Some(last) = history.last() {
            info!(
                "epoch {epoch}/{}: g_total {:.4} d_total {:.4}",
                cfg.epochs, last.generator.total, last.discriminator.total
            );
        }
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            let path = out.checkpoint_path(epoch);
            trainer.checkpoint().save(&path)?;
            info!("saved {}", path.display());
        }
    }
    log.flush().map_err(|e| Error::io(&out.log, e))?;
    Ok(history)
}
