//! Run configuration: every tunable in one place, read from and written to
//! a plain `key = value` file with `[section]` headers.
//!
//! Resolution order is defaults, then the config file, then command-line
//! overrides; all three go through [`RunConfig::set`], so an unknown key is
//! rejected the same way wherever it comes from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{DatasetKind, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{DiscriminatorConfig, GeneratorConfig};
use crate::nn::Activation;
use crate::postprocess::PostprocessConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub kind: DatasetKind,
    pub split_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            kind: DatasetKind::Custom,
            split_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub postprocess: PostprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

fn parse_list(section: &str, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse(section, key, v.trim()))
        .collect()
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("[{section}] {key}: expected true or false, got `{value}`"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::LeakyRelu(_) => "leaky_relu",
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
    }
}

fn join_list(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Sections whose values shape the training trajectory.
const TRAJECTORY_SECTIONS: [&str; 4] = ["generator", "discriminator", "loss", "train"];
/// Keys in those sections that do not.
const TRAJECTORY_EXEMPT: [&str; 3] = ["epochs", "checkpoint_every", "record_time"];

impl RunConfig {
    /// Sets one value addressed by `section` and `key`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let (s, k) = (section, key);
        match (section, key) {
            ("data", "root") => self.data.root = parse_path(value),
            ("data", "kind") => self.data.kind = value.parse()?,
            ("data", "split_file") => self.data.split_file = parse_path(value),
            ("data", "image_size") => {
                let size = parse(s, k, value)?;
                self.generator.image_size = size;
                self.discriminator.image_size = size;
            }

            ("generator", "encoder_channels") => self.generator.encoder_channels = parse_list(s, k, value)?,
            ("generator", "kernel") => self.generator.kernel = parse(s, k, value)?,
            ("generator", "stride") => self.generator.stride = parse(s, k, value)?,
            ("generator", "padding") => self.generator.padding = parse(s, k, value)?,
            ("generator", "leaky_slope") => {
                self.generator.leaky_slope = parse(s, k, value)?;
                if let Activation::LeakyRelu(_) = self.generator.bottleneck_activation {
                    self.generator.bottleneck_activation = Activation::LeakyRelu(self.generator.leaky_slope);
                }
            }
            ("generator", "bottleneck_activation") => {
                self.generator.bottleneck_activation = match value {
                    "tanh" => Activation::Tanh,
                    "leaky_relu" => Activation::LeakyRelu(self.generator.leaky_slope),
                    "sigmoid" => Activation::Sigmoid,
                    _ => return Err(Error::Config(format!("[{s}] {k}: unknown activation `{value}`"))),
                }
            }
            ("generator", "skip_connections") => self.generator.skip_connections = parse_bool(s, k, value)?,
            ("generator", "noise_dropout_p") => self.generator.noise_dropout_p = parse(s, k, value)?,
            ("generator", "dropout_decoder_layers") => self.generator.dropout_decoder_layers = parse(s, k, value)?,

            ("discriminator", "layer_channels") => self.discriminator.layer_channels = parse_list(s, k, value)?,
            ("discriminator", "kernel") => self.discriminator.kernel = parse(s, k, value)?,
            ("discriminator", "strides") => self.discriminator.strides = parse_list(s, k, value)?,
            ("discriminator", "padding") => self.discriminator.padding = parse(s, k, value)?,
            ("discriminator", "leaky_slope") => self.discriminator.leaky_slope = parse(s, k, value)?,

            ("loss", "lambda") => self.loss.lambda = parse(s, k, value)?,
            ("loss", "log_epsilon") => self.loss.log_epsilon = parse(s, k, value)?,

            ("train", "learning_rate") => self.train.learning_rate = parse(s, k, value)?,
            ("train", "adam_beta1") => self.train.adam_beta1 = parse(s, k, value)?,
            ("train", "adam_beta2") => self.train.adam_beta2 = parse(s, k, value)?,
            ("train", "batch_size") => self.train.batch_size = parse(s, k, value)?,
            ("train", "epochs") => self.train.epochs = parse(s, k, value)?,
            ("train", "seed") => self.train.seed = parse(s, k, value)?,
            ("train", "checkpoint_every") => self.train.checkpoint_every = parse(s, k, value)?,
            ("train", "record_time") => self.train.record_time = parse_bool(s, k, value)?,

            ("postprocess", "threshold") => self.postprocess.threshold = parse(s, k, value)?,
            ("postprocess", "morph_shape") => self.postprocess.element.shape = value.parse()?,
            ("postprocess", "morph_size") => self.postprocess.element.size = parse(s, k, value)?,
            ("postprocess", "morph_iters") => self.postprocess.element.iterations = parse(s, k, value)?,
            ("postprocess", "keep_largest") => self.postprocess.keep_largest = parse_bool(s, k, value)?,

            _ => {
                return Err(Error::UnknownConfigKey {
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Every setting as `(section, key, value)`, in file order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let (g, d, t, p) = (&self.generator, &self.discriminator, &self.train, &self.postprocess);
        vec![
            ("data", "root", path_str(&self.data.root)),
            ("data", "kind", self.data.kind.to_string()),
            ("data", "split_file", path_str(&self.data.split_file)),
            ("data", "image_size", g.image_size.to_string()),
            ("generator", "encoder_channels", join_list(&g.encoder_channels)),
            ("generator", "kernel", g.kernel.to_string()),
            ("generator", "stride", g.stride.to_string()),
            ("generator", "padding", g.padding.to_string()),
            ("generator", "leaky_slope", g.leaky_slope.to_string()),
            ("generator", "bottleneck_activation", activation_name(g.bottleneck_activation).into()),
            ("generator", "skip_connections", g.skip_connections.to_string()),
            ("generator", "noise_dropout_p", g.noise_dropout_p.to_string()),
            ("generator", "dropout_decoder_layers", g.dropout_decoder_layers.to_string()),
            ("discriminator", "layer_channels", join_list(&d.layer_channels)),
            ("discriminator", "kernel", d.kernel.to_string()),
            ("discriminator", "strides", join_list(&d.strides)),
            ("discriminator", "padding", d.padding.to_string()),
            ("discriminator", "leaky_slope", d.leaky_slope.to_string()),
            ("loss", "lambda", self.loss.lambda.to_string()),
            ("loss", "log_epsilon", self.loss.log_epsilon.to_string()),
            ("train", "learning_rate", t.learning_rate.to_string()),
            ("train", "adam_beta1", t.adam_beta1.to_string()),
            ("train", "adam_beta2", t.adam_beta2.to_string()),
            ("train", "batch_size", t.batch_size.to_string()),
            ("train", "epochs", t.epochs.to_string()),
            ("train", "seed", t.seed.to_string()),
            ("train", "checkpoint_every", t.checkpoint_every.to_string()),
            ("train", "record_time", t.record_time.to_string()),
            ("postprocess", "threshold", p.threshold.to_string()),
            ("postprocess", "morph_shape", p.element.shape.to_string()),
            ("postprocess", "morph_size", p.element.size.to_string()),
            ("postprocess", "morph_iters", p.element.iterations.to_string()),
            ("postprocess", "keep_largest", p.keep_largest.to_string()),
        ]
    }

    /// Applies a config file's contents on top of `self`.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)));
            };
            if section.is_empty() {
                return Err(Error::Config(format!("line {}: `{}` appears before any [section]", lineno + 1, key.trim())));
            }
            self.set(&section, key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_str_with_defaults(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_str(text)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_str(&text)
    }

    /// Serialized form; parsing it back yields an equal config.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.entries() {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.postprocess.validate()?;
        if self.generator.image_size != IMAGE_SIZE {
            log::warn!(
                "running at {}px instead of the standard {IMAGE_SIZE}px",
                self.generator.image_size
            );
        }
        Ok(())
    }

    /// Hash of every setting that affects the training trajectory; resuming
    /// requires it to match.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (section, key, value) in self.entries() {
            if (TRAJECTORY_SECTIONS.contains(&section) && !TRAJECTORY_EXEMPT.contains(&key))
                || (section, key) == ("data", "image_size")
            {
                h.update(format!("{section}.{key}={value}\n"));
            }
        }
        hex::encode(h.finalize())
    }
}
