mod common;

use common::*;
use od_cgan::losses::*;
use od_cgan::tensor::{MaskBatch, MaskKind, ScoreMap, Tensor};
use rand::Rng;

const STEP: f32 = 1e-4;

fn map(vals: Vec<f32>) -> Tensor {
    let side = (vals.len() as f64).sqrt() as usize;
    Tensor::from_vec(&[1, 1, side, side], vals).unwrap()
}

fn scores(vals: Vec<f32>) -> ScoreMap {
    ScoreMap::new(map(vals)).unwrap()
}

fn soft(vals: Vec<f32>) -> MaskBatch {
    MaskBatch::new(map(vals), MaskKind::Soft).unwrap()
}

fn hard(vals: Vec<f32>) -> MaskBatch {
    MaskBatch::new(map(vals), MaskKind::Hard).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central difference over the realized (rounded) perturbation.
fn central(v: &[f32], i: usize, f: &dyn Fn(&[f32]) -> f64) -> f64 {
    let (mut plus, mut minus) = (v.to_vec(), v.to_vec());
    plus[i] += STEP;
    minus[i] -= STEP;
    (f(&plus) - f(&minus)) / (plus[i] as f64 - minus[i] as f64)
}

#[test]
fn one_element_reference_values() {
    let cfg = LossConfig::default();
    let g = generator_loss(&scores(vec![0.5]), &soft(vec![1.0]), &hard(vec![1.0]), &cfg).unwrap();
    assert!((g.total - std::f64::consts::LN_2).abs() < 1e-6);
    let d = discriminator_loss(&scores(vec![0.5]), &scores(vec![0.5]), &cfg).unwrap();
    assert!((d.total - 2.0 * std::f64::consts::LN_2).abs() < 1e-6);
    let d = discriminator_loss(&scores(vec![0.9]), &scores(vec![0.2]), &cfg).unwrap();
    assert!((d.total - 0.328504).abs() < 1e-6, "{}", d.total);
}

#[test]
fn parts_add_up_to_total() {
    let mut r = rng(1);
    let s: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
    let p: Vec<f32> = (0..16).map(|_| r.random_range(0.0..1.0)).collect();
    let y = random_plane(&mut r, 16, 0.5);
    let cfg = LossConfig { lambda: 7.5, ..Default::default() };
    let g = generator_loss(&scores(s.clone()), &soft(p), &hard(y), &cfg).unwrap();
    assert!(rel_err(g.total, g.adversarial + 7.5 * g.l1) < 1e-9);
    let d = discriminator_loss(&scores(s.clone()), &scores(s), &cfg).unwrap();
    assert!(rel_err(d.total, d.real + d.fake) < 1e-9);
}

#[test]
fn generator_gradients_match_central_differences() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let s: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let y = random_plane(&mut r, 16, 0.5);
        // Keep predictions away from the L1 kink at pred == gt.
        let p: Vec<f32> = (0..16).map(|_| r.random_range(0.01..0.99)).collect();
        let cfg = LossConfig { lambda: 3.0, ..Default::default() };
        let (_, grad) = generator_loss_with_grad(&scores(s.clone()), &soft(p.clone()), &hard(y.clone()), &cfg).unwrap();

        let by_scores = |v: &[f32]| generator_loss(&scores(v.to_vec()), &soft(p.clone()), &hard(y.clone()), &cfg).unwrap().total;
        for i in 0..16 {
            let fd = central(&s, i, &by_scores);
            let an = grad.d_scores.data()[i] as f64;
            assert!(rel_err(an, fd) < 1e-3, "scores[{i}]: analytic {an} vs numeric {fd}");
        }
        let by_pred = |v: &[f32]| generator_loss(&scores(s.clone()), &soft(v.to_vec()), &hard(y.clone()), &cfg).unwrap().total;
        for i in 0..16 {
            let fd = central(&p, i, &by_pred);
            let an = grad.d_pred.data()[i] as f64;
            assert!(rel_err(an, fd) < 1e-3, "pred[{i}]: analytic {an} vs numeric {fd}");
        }
    }
}

#[test]
fn discriminator_gradients_match_central_differences() {
    for seed in 10..15 {
        let mut r = rng(seed);
        let real: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let fake: Vec<f32> = (0..16).map(|_| r.random_range(0.05..0.95)).collect();
        let cfg = LossConfig::default();
        let (_, grad) = discriminator_loss_with_grad(&scores(real.clone()), &scores(fake.clone()), &cfg).unwrap();
        let by_real = |v: &[f32]| discriminator_loss(&scores(v.to_vec()), &scores(fake.clone()), &cfg).unwrap().total;
        let by_fake = |v: &[f32]| discriminator_loss(&scores(real.clone()), &scores(v.to_vec()), &cfg).unwrap().total;
        for i in 0..16 {
            let (fr, ff) = (central(&real, i, &by_real), central(&fake, i, &by_fake));
            assert!(rel_err(grad.d_real.data()[i] as f64, fr) < 1e-3);
            assert!(rel_err(grad.d_fake.data()[i] as f64, ff) < 1e-3);
        }
    }
}

#[test]
fn perfect_discriminator_loss_vanishes_up_to_epsilon() {
    let cfg = LossConfig::default();
    let real = ScoreMap::filled(&[1, 1, 2, 2], 1.0 - f32::EPSILON / 2.0).unwrap();
    let fake = ScoreMap::filled(&[1, 1, 2, 2], f32::MIN_POSITIVE).unwrap();
    let d = discriminator_loss(&real, &fake, &cfg).unwrap();
    assert!(d.total >= 0.0 && d.total < 1e-6, "{}", d.total);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let cfg = LossConfig::default();
    let a = ScoreMap::filled(&[1, 1, 2, 2], 0.5).unwrap();
    let b = ScoreMap::filled(&[1, 1, 3, 3], 0.5).unwrap();
    assert!(discriminator_loss(&a, &b, &cfg).is_err());
    assert!(generator_loss(&a, &soft(vec![0.0; 4]), &hard(vec![0.0; 9]), &cfg).is_err());
}
