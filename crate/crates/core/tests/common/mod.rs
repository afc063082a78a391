#![allow(dead_code)]

use std::path::Path;

use od_cgan::config::RunConfig;
use od_cgan::data::{load_manifest, DatasetKind, LoadedSplit};
use od_cgan::model::{DiscriminatorConfig, GeneratorConfig};
use od_cgan::tensor::{ImageBatch, MaskBatch, MaskKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY_SIZE: usize = 32;

/// Five-level generator for 32×32 inputs.
pub fn toy_generator() -> GeneratorConfig {
    GeneratorConfig {
        image_size: TOY_SIZE,
        encoder_channels: vec![8, 16, 16, 16, 16],
        dropout_decoder_layers: 2,
        ..GeneratorConfig::default()
    }
}

/// Five-layer discriminator for 32×32 inputs (2×2 score map).
pub fn toy_discriminator() -> DiscriminatorConfig {
    DiscriminatorConfig {
        image_size: TOY_SIZE,
        layer_channels: vec![8, 16, 16, 16, 1],
        ..DiscriminatorConfig::default()
    }
}

/// The toy architecture as config-file text.
pub fn toy_config_text() -> String {
    let mut cfg = RunConfig::default();
    cfg.generator = toy_generator();
    cfg.discriminator = toy_discriminator();
    cfg.to_ini()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_images(rng: &mut ChaCha8Rng, b: usize, size: usize) -> ImageBatch {
    let data = (0..b * 3 * size * size).map(|_| rng.random::<f32>()).collect();
    ImageBatch::new(Tensor::from_vec(&[b, 3, size, size], data).unwrap()).unwrap()
}

pub fn random_plane(rng: &mut ChaCha8Rng, n: usize, p_on: f64) -> Vec<f32> {
    (0..n).map(|_| if rng.random_bool(p_on) { 1.0 } else { 0.0 }).collect()
}

pub fn random_hard(rng: &mut ChaCha8Rng, b: usize, size: usize) -> MaskBatch {
    let data = random_plane(rng, b * size * size, 0.3);
    MaskBatch::new(Tensor::from_vec(&[b, 1, size, size], data).unwrap(), MaskKind::Hard).unwrap()
}

pub fn hard_from(plane: Vec<f32>, size: usize) -> MaskBatch {
    MaskBatch::new(Tensor::from_vec(&[1, 1, size, size], plane).unwrap(), MaskKind::Hard).unwrap()
}

/// Writes `n` synthetic samples (first `n_train` in train) and loads the train split at `size`.
pub fn synthetic_train_split(root: &Path, n: usize, n_train: usize, size: usize, seed: u64) -> LoadedSplit {
    od_cgan::synthetic::write_dataset(root, n, n_train, 64, seed).unwrap();
    let m = load_manifest(root, DatasetKind::Custom, None).unwrap();
    LoadedSplit::load(&m.train, size).unwrap()
}

/// Accuracy, Dice, Jaccard, sensitivity and specificity of two binary planes,
/// by a plain per-pixel loop with the textbook formulas (empty denominators → 1).
pub fn brute_force_metrics(pred: &[f32], gt: &[f32]) -> [f64; 5] {
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        let (p, g) = (pred[i] > 0.5, gt[i] > 0.5);
        if p && g {
            tp += 1.0;
        } else if !p && !g {
            tn += 1.0;
        } else if p {
            fp += 1.0;
        } else {
            fn_ += 1.0;
        }
    }
    let safe = |n: f64, d: f64| if d == 0.0 { 1.0 } else { n / d };
    [
        safe(tp + tn, tp + tn + fp + fn_),
        safe(2.0 * tp, 2.0 * tp + fp + fn_),
        safe(tp, tp + fp + fn_),
        safe(tp, tp + fn_),
        safe(tn, tn + fp),
    ]
}

/// 3×3 minimum (erosion) or maximum (dilation) filter over a square plane,
/// treating pixels outside the plane as 0.
pub fn min_max_filter(plane: &[f32], side: usize, want_min: bool) -> Vec<f32> {
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= side as isize || x >= side as isize {
            0.0
        } else {
            plane[y as usize * side + x as usize]
        }
    };
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side as isize {
        for x in 0..side as isize {
            let mut v = if want_min { f32::INFINITY } else { f32::NEG_INFINITY };
            for dy in -1..=1 {
                for dx in -1..=1 {
                    v = if want_min { v.min(at(y + dy, x + dx)) } else { v.max(at(y + dy, x + dx)) };
                }
            }
            out.push(v);
        }
    }
    out
}
