//! Command-line front end: `train`, `predict`, `evaluate` and `report`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{self, load_manifest, DatasetManifest, LoadedSplit};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_split, Segmenter};
use crate::model::Generator;
use crate::report::{compose_panel, mask_png, probability_png, PanelRow};
use crate::tensor::{ImageBatch, Tensor};
use crate::train::{latest_checkpoint, train, RunOutput, Trainer};

pub const DATA_ENV: &str = "OD_CGAN_DATA";
pub const CONFIG_FILE: &str = "config.ini";

#[derive(Debug, Parser)]
#[command(name = "od-cgan", version, about = "Optic-disc segmentation with a conditional GAN")]
pub struct Cli {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Random seed for initialization, shuffling, dropout and example selection.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (train: parent of run directories).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a generator/discriminator pair.
    Train(TrainArgs),
    /// Segment individual images with a trained checkpoint.
    Predict(PredictArgs),
    /// Score a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Render an image | ground truth | prediction panel for a run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root (falls back to the config file, then OD_CGAN_DATA).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// drishti-gs1, rim-one or custom.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Split file (default: <data>/split.txt when present).
    #[arg(long)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Structuring element side length (odd).
    #[arg(long)]
    pub morph_size: Option<usize>,
    #[arg(long)]
    pub morph_iters: Option<usize>,
    /// square or disc.
    #[arg(long)]
    pub morph_shape: Option<String>,
    /// Keep only the largest connected region.
    #[arg(long)]
    pub keep_largest: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_l1: Option<f64>,
    #[arg(long)]
    pub log_eps: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Run directory name under --out-dir.
    #[arg(long, default_value = "run")]
    pub run_name: String,
    /// Continue an existing run from its latest checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Replace an existing run directory.
    #[arg(long)]
    pub force: bool,
    /// Write 0 in the log's `ms` column so identical runs give identical logs.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
    /// Images to segment.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long, default_value_t = 3)]
    pub n_examples: usize,
}

type Override = (&'static str, &'static str, String);

fn push<T: ToString>(out: &mut Vec<Override>, section: &'static str, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((section, key, v.to_string()));
    }
}

impl DataArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "data", "root", &self.data.as_ref().map(|p| p.display().to_string()));
        push(out, "data", "kind", &self.dataset);
        push(out, "data", "split_file", &self.split.as_ref().map(|p| p.display().to_string()));
    }
}

impl PostArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "postprocess", "threshold", &self.threshold);
        push(out, "postprocess", "morph_size", &self.morph_size);
        push(out, "postprocess", "morph_iters", &self.morph_iters);
        push(out, "postprocess", "morph_shape", &self.morph_shape);
        if self.keep_largest {
            out.push(("postprocess", "keep_largest", "true".into()));
        }
    }
}

/// Defaults, then `explicit` (or `fallback` when no file was given), then
/// flag overrides; a dataset root still missing comes from `OD_CGAN_DATA`.
fn resolve_config(explicit: Option<&Path>, fallback: Option<PathBuf>, overrides: &[Override]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    match (explicit, fallback) {
        (Some(path), _) => cfg.merge_file(path)?,
        (None, Some(path)) if path.is_file() => cfg.merge_file(&path)?,
        _ => {}
    }
    for (section, key, value) in overrides {
        cfg.set(section, key, value)?;
    }
    if cfg.data.root.is_none() {
        if let Some(root) = std::env::var_os(DATA_ENV).filter(|v| !v.is_empty()) {
            cfg.data.root = Some(PathBuf::from(root));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(cfg: &RunConfig) -> Result<DatasetManifest> {
    let root = cfg
        .data
        .root
        .as_ref()
        .ok_or_else(|| Error::Config(format!("no dataset root: pass --data, set [data] root, or set {DATA_ENV}")))?;
    load_manifest(root, cfg.data.kind, cfg.data.split_file.as_deref())
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_ini()).map_err(|e| Error::io(&path, e))
}

/// `<run>/config.ini` for a checkpoint stored as `<run>/checkpoints/<file>`.
fn run_config_for(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent()?.parent().map(|run| run.join(CONFIG_FILE))
}

fn load_generator(cfg: &RunConfig, checkpoint: &Path) -> Result<Generator> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut g = Generator::new(cfg.generator.clone(), cfg.train.seed)?;
    ckpt.generator.load_into(&mut g)?;
    Ok(g)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let run_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs")).join(&args.run_name);
    if run_dir.exists() && !args.resume {
        if !args.force {
            return Err(Error::Config(format!(
                "run directory {} already exists (use --force to replace it or --resume to continue)",
                run_dir.display()
            )));
        }
        fs::remove_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    }
    let mut ov = Vec::new();
    args.data.overrides(&mut ov);
    push(&mut ov, "train", "epochs", &args.epochs);
    push(&mut ov, "train", "batch_size", &args.batch_size);
    push(&mut ov, "train", "learning_rate", &args.lr);
    push(&mut ov, "loss", "lambda", &args.lambda_l1);
    push(&mut ov, "loss", "log_epsilon", &args.log_eps);
    push(&mut ov, "train", "checkpoint_every", &args.checkpoint_every);
    push(&mut ov, "train", "seed", &cli.seed);
    if args.no_timing {
        ov.push(("train", "record_time", "false".into()));
    }
    let fallback = args.resume.then(|| run_dir.join(CONFIG_FILE));
    let cfg = resolve_config(cli.config.as_deref(), fallback, &ov)?;

    let manifest = dataset(&cfg)?;
    let split = LoadedSplit::load(&manifest.train, cfg.generator.image_size)?;
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write_config(&run_dir, &cfg)?;
    let out = RunOutput::in_dir(&run_dir);
    out.ensure_writable()?;

    let (g, d, l, t, fp) = (
        cfg.generator.clone(),
        cfg.discriminator.clone(),
        cfg.loss.clone(),
        cfg.train.clone(),
        cfg.fingerprint(),
    );
    let mut trainer = match latest_checkpoint(&out.checkpoints)? {
        Some(path) if args.resume => {
            info!("resuming from {}", path.display());
            Trainer::resume(g, d, l, t, fp, &Checkpoint::load(&path)?)?
        }
        None if args.resume => {
            return Err(Error::Config(format!("--resume: no checkpoint under {}", out.checkpoints.display())))
        }
        _ => Trainer::new(g, d, l, t, fp)?,
    };
    info!(
        "training on {} images, {} steps/epoch, {} epochs",
        split.len(),
        cfg.train.steps_per_epoch(split.len()),
        cfg.train.epochs
    );
    train(&mut trainer, &split, &out)?;
    println!(
        "finished: {} epochs, {} steps, {} generator updates; run directory {}",
        trainer.epoch(),
        trainer.step(),
        trainer.generator_updates(),
        run_dir.display()
    );
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> Result<()> {
    let mut ov = Vec::new();
    args.post.overrides(&mut ov);
    push(&mut ov, "train", "seed", &cli.seed);
    let cfg = resolve_config(cli.config.as_deref(), run_config_for(&args.checkpoint), &ov)?;
    let generator = load_generator(&cfg, &args.checkpoint)?;
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("predictions"));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    write_config(&out_dir, &cfg)?;
    let size = cfg.generator.image_size;
    let mut written = 0;
    for path in &args.images {
        let result = (|| -> Result<()> {
            let img = data::open_image(path)?;
            let x = ImageBatch::new(Tensor::stack(&[&data::preprocess_image(&img, size)?])?)?;
            let soft = generator.segment(&x)?;
            let hard = cfg.postprocess.apply(&soft)?;
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let prob_path = out_dir.join(format!("{id}_prob.png"));
            probability_png(soft.tensor().data(), size as u32)
                .save(&prob_path)
                .map_err(|e| Error::image(&prob_path, e))?;
            let mask_path = out_dir.join(format!("{id}_mask.png"));
            mask_png(hard.tensor().data(), size as u32)
                .save(&mask_path)
                .map_err(|e| Error::image(&mask_path, e))?;
            Ok(())
        })();
        match result {
            Ok(()) => written += 1,
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if written == 0 {
        return Err(Error::Data("no input image could be segmented".into()));
    }
    println!("wrote {written} prediction pair(s) to {}", out_dir.display());
    Ok(())
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<()> {
    let mut ov = Vec::new();
    args.data.overrides(&mut ov);
    args.post.overrides(&mut ov);
    push(&mut ov, "train", "seed", &cli.seed);
    let run_config = run_config_for(&args.checkpoint);
    let cfg = resolve_config(cli.config.as_deref(), run_config.clone(), &ov)?;
    let manifest = dataset(&cfg)?;
    if manifest.test.is_empty() {
        return Err(Error::Data("test split is empty; nothing to evaluate".into()));
    }
    let generator = load_generator(&cfg, &args.checkpoint)?;
    let split = LoadedSplit::load(&manifest.test, cfg.generator.image_size)?;
    let eval = evaluate_split(&generator, &split, &cfg.postprocess, cfg.train.batch_size)?;
    let out_dir = match (&cli.out_dir, run_config) {
        (Some(d), _) => d.clone(),
        (None, Some(p)) if p.is_file() => p.parent().map(Path::to_path_buf).unwrap_or_default(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let csv = out_dir.join("metrics.csv");
    eval.write_csv(&csv)?;
    println!("{}\nper-image metrics: {}", eval.table(), csv.display());
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let mut ov = Vec::new();
    args.data.overrides(&mut ov);
    args.post.overrides(&mut ov);
    push(&mut ov, "train", "seed", &cli.seed);
    let cfg = resolve_config(cli.config.as_deref(), Some(args.run.join(CONFIG_FILE)), &ov)?;
    let checkpoints = RunOutput::in_dir(&args.run).checkpoints;
    let ckpt = latest_checkpoint(&checkpoints)?
        .ok_or_else(|| Error::Data(format!("no checkpoint under {}", checkpoints.display())))?;
    let manifest = dataset(&cfg)?;
    let samples = if manifest.test.is_empty() {
        warn!("test split is empty; drawing examples from the train split");
        &manifest.train
    } else {
        &manifest.test
    };
    let mut n = args.n_examples;
    if n == 0 {
        return Err(Error::Config("--n-examples must be at least 1".into()));
    }
    if n > samples.len() {
        warn!("only {} examples available; clamping --n-examples {n}", samples.len());
        n = samples.len();
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed));
    let chosen: Vec<_> = order[..n].iter().map(|&i| samples[i].clone()).collect();
    let split = LoadedSplit::load(&chosen, cfg.generator.image_size)?;
    let generator = load_generator(&cfg, &ckpt)?;
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let batch = split.batch(&[i])?;
        preds.push(cfg.postprocess.apply(&generator.segment(&batch.images)?)?.into_tensor());
    }
    let rows: Vec<PanelRow<'_>> = (0..n)
        .map(|i| PanelRow {
            image: &split.images[i],
            truth: split.masks[i].as_ref().expect("loaded samples carry masks"),
            prediction: &preds[i],
        })
        .collect();
    let panel = compose_panel(&rows)?;
    let out_dir = cli.out_dir.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let path = out_dir.join("report.png");
    panel.save(&path).map_err(|e| Error::image(&path, e))?;
    println!("wrote {} ({} examples: {})", path.display(), n, split.ids.join(", "));
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                1
            } else {
                2
            }
        }
    }
}
