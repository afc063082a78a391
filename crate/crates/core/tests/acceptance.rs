//! End-to-end acceptance checks. Prints one PASS / FAIL / NOT RUN line per
//! criterion and exits non-zero if any criterion fails.
//!
//! The full-dataset reproduction runs only when dataset roots are supplied
//! through `OD_CGAN_DRISHTI_ROOT` and/or `OD_CGAN_RIMONE_ROOT`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use od_cgan::checkpoint::Checkpoint;
use od_cgan::data::{load_manifest, DatasetKind, LoadedSplit};
use od_cgan::losses::*;
use od_cgan::metrics::{confusion_plane, evaluate_split, metrics_from_counts};
use od_cgan::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use od_cgan::postprocess::{dilate_plane, erode_plane, morph_open, PostprocessConfig, StructuringElement};
use od_cgan::tensor::{MaskBatch, MaskKind, ScoreMap, Tensor};
use od_cgan::train::{train, RunOutput, TrainConfig, Trainer};
use rand::Rng;

enum Outcome {
    Pass(String),
    NotRun(String),
}

fn within(limit: Duration, start: Instant) -> String {
    let took = start.elapsed();
    assert!(took <= limit, "took {took:.1?}, limit {limit:?}");
    format!("{took:.2?}")
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    for i in 0..1000 {
        let pred = random_plane(&mut r, 256, [0.0, 0.2, 0.5, 0.8, 1.0][i % 5]);
        let gt = random_plane(&mut r, 256, [0.0, 0.5, 1.0][i % 3]);
        let c = confusion_plane(&pred, &gt).unwrap();
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&p, &g) in pred.iter().zip(&gt) {
            match (p == 1.0, g == 1.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (tp, tn, fp, fn_));
        let m = metrics_from_counts(&c);
        let got = [m.accuracy, m.dice, m.jaccard, m.sensitivity, m.specificity];
        for (g, w) in got.into_iter().zip(brute_force_metrics(&pred, &gt)) {
            assert!((g - w).abs() <= 1e-12, "pair {i}: {g} vs {w}");
        }
    }
    Outcome::Pass(format!("1000 pairs in {}", within(Duration::from_secs(5), start)))
}

fn map(vals: Vec<f32>) -> Tensor {
    let side = (vals.len() as f64).sqrt() as usize;
    Tensor::from_vec(&[1, 1, side, side], vals).unwrap()
}

fn loss_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let s = |v: Vec<f32>| ScoreMap::new(map(v)).unwrap();
    let soft = |v: Vec<f32>| MaskBatch::new(map(v), MaskKind::Soft).unwrap();
    let hard = |v: Vec<f32>| MaskBatch::new(map(v), MaskKind::Hard).unwrap();

    let g = generator_loss(&s(vec![0.5]), &soft(vec![1.0]), &hard(vec![1.0]), &cfg).unwrap();
    assert!((g.total - std::f64::consts::LN_2).abs() < 1e-6);
    let d = discriminator_loss(&s(vec![0.5]), &s(vec![0.5]), &cfg).unwrap();
    assert!((d.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);

    let h = 1e-4f32;
    let central = |v: &[f32], i: usize, f: &dyn Fn(Vec<f32>) -> f64| {
        let (mut a, mut b) = (v.to_vec(), v.to_vec());
        a[i] += h;
        b[i] -= h;
        let denom = a[i] as f64 - b[i] as f64;
        (f(a) - f(b)) / denom
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let sc: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let fk: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let pr: Vec<f32> = (0..16).map(|_| r.random_range(0.01..0.99)).collect();
        let gt = random_plane(&mut r, 16, 0.5);
        let (_, gg) = generator_loss_with_grad(&s(sc.clone()), &soft(pr.clone()), &hard(gt.clone()), &cfg).unwrap();
        let (_, dg) = discriminator_loss_with_grad(&s(sc.clone()), &s(fk.clone()), &cfg).unwrap();
        for i in 0..16 {
            let checks = [
                (gg.d_scores.data()[i], central(&sc, i, &|v| generator_loss(&s(v), &soft(pr.clone()), &hard(gt.clone()), &cfg).unwrap().total)),
                (gg.d_pred.data()[i], central(&pr, i, &|v| generator_loss(&s(sc.clone()), &soft(v), &hard(gt.clone()), &cfg).unwrap().total)),
                (dg.d_real.data()[i], central(&sc, i, &|v| discriminator_loss(&s(v), &s(fk.clone()), &cfg).unwrap().total)),
                (dg.d_fake.data()[i], central(&fk, i, &|v| discriminator_loss(&s(sc.clone()), &s(v), &cfg).unwrap().total)),
            ];
            for (an, fd) in checks {
                let e = rel(an as f64, fd);
                assert!(e < 1e-3, "analytic {an} vs numeric {fd}");
                worst = worst.max(e);
            }
        }
    }
    Outcome::Pass(format!("worst relative error {worst:.1e}, {}", within(Duration::from_secs(10), start)))
}

fn shape_range_law() -> Outcome {
    let start = Instant::now();
    let mut g = Generator::new(GeneratorConfig::default(), 0).unwrap();
    let d = Discriminator::new(DiscriminatorConfig::default(), 1).unwrap();
    let mut r = rng(3);
    for b in [1, 2, 4] {
        let x = random_images(&mut r, b, 256);
        for m in [g.forward_eval(&x).unwrap(), g.forward_train(&x, &mut r).unwrap().0] {
            assert_eq!(m.tensor().shape(), [b, 1, 256, 256]);
            assert!(m.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let s = d.forward_eval(&x, &random_hard(&mut r, b, 256)).unwrap();
        assert_eq!(s.tensor().shape(), [b, 1, 30, 30]);
        assert!(s.tensor().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
    Outcome::Pass(format!("B = 1, 2, 4 in {}", within(Duration::from_secs(30), start)))
}

fn morphology_properties() -> Outcome {
    let start = Instant::now();
    let se = StructuringElement::default();
    let mut r = rng(4);
    for i in 0..200 {
        let plane = random_plane(&mut r, 32 * 32, 0.3 + 0.5 * i as f64 / 200.0);
        let m = MaskBatch::new(Tensor::from_vec(&[1, 1, 32, 32], plane.clone()).unwrap(), MaskKind::Hard).unwrap();
        let once = morph_open(&m, &se).unwrap();
        let twice = morph_open(&once, &se).unwrap();
        assert!(once.tensor().data().iter().zip(&plane).all(|(o, p)| o <= p), "not anti-extensive");
        assert_eq!(once.tensor().data(), twice.tensor().data(), "not idempotent");
        let oracle = min_max_filter(&min_max_filter(&plane, 32, true), 32, false);
        assert_eq!(once.tensor().data(), &oracle[..]);
        assert_eq!(erode_plane(&plane, 32, 32, &se), min_max_filter(&plane, 32, true));
        assert_eq!(dilate_plane(&plane, 32, 32, &se), min_max_filter(&plane, 32, false));
    }
    Outcome::Pass(format!("200 masks in {}", within(Duration::from_secs(5), start)))
}

fn overfit_sanity() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    od_cgan::synthetic::write_dataset(dir.path(), 4, 4, 256, 11).unwrap();
    let m = load_manifest(dir.path(), DatasetKind::Custom, None).unwrap();
    let split = LoadedSplit::load(&m.train, 256).unwrap();
    let cfg = TrainConfig { seed: 7, ..TrainConfig::default() };
    let mut t = Trainer::new(GeneratorConfig::default(), DiscriminatorConfig::default(), LossConfig::default(), cfg, "overfit".into()).unwrap();
    while t.epoch() < 200 {
        t.train_epoch(&split, |_| Ok(())).unwrap();
    }
    let eval = evaluate_split(&t.generator, &split, &PostprocessConfig::default(), 4).unwrap();
    let dice = eval.aggregate.dice;
    assert!(dice >= 0.95, "train-set mean Dice {dice:.4} < 0.95");
    Outcome::Pass(format!(
        "4 synthetic disc images, 200 epochs ({} updates): Dice {dice:.4}, Jaccard {:.4}, {:.0?}",
        t.generator_updates(),
        eval.aggregate.jaccard,
        start.elapsed()
    ))
}

fn toy_run(data: &LoadedSplit, dir: &Path) -> Trainer {
    let cfg = TrainConfig { epochs: 5, batch_size: 2, seed: 5, checkpoint_every: 5, record_time: false, ..TrainConfig::default() };
    let mut t = Trainer::new(toy_generator(), toy_discriminator(), LossConfig::default(), cfg, "toy".into()).unwrap();
    train(&mut t, data, &RunOutput::in_dir(dir)).unwrap();
    t
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let split = synthetic_train_split(&dir.path().join("data"), 4, 4, TOY_SIZE, 6);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    toy_run(&split, &a);
    toy_run(&split, &b);
    let log_a = std::fs::read(a.join("train_log.csv")).unwrap();
    assert_eq!(log_a, std::fs::read(b.join("train_log.csv")).unwrap(), "train logs differ");

    let path = RunOutput::in_dir(&a).checkpoint_path(5);
    let bytes = std::fs::read(&path).unwrap();
    let reloaded = Checkpoint::load(&path).unwrap();
    let copy = dir.path().join("copy.ckpt");
    reloaded.save(&copy).unwrap();
    assert_eq!(bytes, std::fs::read(&copy).unwrap(), "checkpoint changed on save→load→save");
    Outcome::Pass(format!(
        "identical {}-row logs; {}-byte checkpoint round-trips",
        log_a.iter().filter(|&&c| c == b'\n').count() - 1,
        bytes.len()
    ))
}

fn reproduce(kind: DatasetKind, root: &Path, dice_min: f64, jaccard_min: f64) -> String {
    let m = load_manifest(root, kind, None).unwrap();
    let train_split = LoadedSplit::load(&m.train, 256).unwrap();
    let test_split = LoadedSplit::load(&m.test, 256).unwrap();
    let mut t = Trainer::new(GeneratorConfig::default(), DiscriminatorConfig::default(), LossConfig::default(), TrainConfig::default(), kind.to_string()).unwrap();
    while t.epoch() < t.config().epochs {
        t.train_epoch(&train_split, |_| Ok(())).unwrap();
    }
    let a = evaluate_split(&t.generator, &test_split, &PostprocessConfig::default(), 4).unwrap().aggregate;
    assert!(a.dice >= dice_min && a.jaccard >= jaccard_min, "{kind}: Dice {:.4}, Jaccard {:.4}", a.dice, a.jaccard);
    format!("{kind} Dice {:.4} Jaccard {:.4}", a.dice, a.jaccard)
}

fn full_dataset_reproduction() -> Outcome {
    let roots = [
        ("OD_CGAN_DRISHTI_ROOT", DatasetKind::DrishtiGs1, 0.94, 0.90),
        ("OD_CGAN_RIMONE_ROOT", DatasetKind::RimOne, 0.94, 0.88),
    ];
    let mut done = Vec::new();
    for (var, kind, dice, jaccard) in roots {
        if let Some(root) = std::env::var_os(var).filter(|v| !v.is_empty()) {
            done.push(reproduce(kind, Path::new(&root), dice, jaccard));
        }
    }
    if done.is_empty() {
        Outcome::NotRun("datasets unavailable (set OD_CGAN_DRISHTI_ROOT / OD_CGAN_RIMONE_ROOT)".into())
    } else {
        Outcome::Pass(done.join("; "))
    }
}

fn step_count() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("drishti");
    od_cgan::synthetic::write_dataset(&root, 101, 50, 32, 8).unwrap();
    let m = load_manifest(&root, DatasetKind::DrishtiGs1, None).unwrap();
    assert_eq!((m.train.len(), m.test.len()), (50, 51));
    let split = LoadedSplit::load(&m.train, TOY_SIZE).unwrap();
    let cfg = TrainConfig { record_time: false, ..TrainConfig::default() };
    assert_eq!((cfg.batch_size, cfg.epochs, cfg.steps_per_epoch(split.len())), (4, 200, 13));
    let mut t = Trainer::new(toy_generator(), toy_discriminator(), LossConfig::default(), cfg, "steps".into()).unwrap();
    let history = train(&mut t, &split, &RunOutput::in_dir(&dir.path().join("run"))).unwrap();
    assert_eq!(history.len(), 2600);
    assert_eq!((t.generator_updates(), t.discriminator_updates()), (2600, 2600));
    assert!(history.iter().all(|s| s.generator.is_finite() && s.discriminator.is_finite()));
    Outcome::Pass("50-image split, batch 4, 200 epochs: 13 steps/epoch, 2600 generator updates (toy-width networks)".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("loss correctness", loss_correctness),
        ("shape/range law", shape_range_law),
        ("morphology properties", morphology_properties),
        ("overfit sanity", overfit_sanity),
        ("determinism", determinism),
        ("full-dataset reproduction", full_dataset_reproduction),
        ("step-count arithmetic", step_count),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Outcome::Pass(detail)) => println!("criterion {n} ({name}): PASS - {detail}"),
            Ok(Outcome::NotRun(why)) => println!("criterion {n} ({name}): NOT RUN - {why}"),
            Err(panic) => {
                failed += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {n} ({name}): FAIL - {msg}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
