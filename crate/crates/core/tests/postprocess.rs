mod common;

use common::*;
use od_cgan::postprocess::*;
use od_cgan::tensor::{MaskBatch, MaskKind, Tensor};
use rand::Rng;

const SIDE: usize = 32;

fn square3() -> StructuringElement {
    StructuringElement::default()
}

/// Reads a pixel with zero padding outside the plane.
fn at(plane: &[f32], y: isize, x: isize) -> f32 {
    if y < 0 || x < 0 || y >= SIDE as isize || x >= SIDE as isize {
        0.0
    } else {
        plane[y as usize * SIDE + x as usize]
    }
}

fn random_masks() -> Vec<Vec<f32>> {
    let mut r = rng(42);
    (0..200)
        .map(|i| random_plane(&mut r, SIDE * SIDE, 0.2 + 0.6 * (i as f64 / 200.0)))
        .collect()
}

#[test]
fn erosion_and_dilation_match_min_max_filters() {
    for plane in random_masks() {
        assert_eq!(erode_plane(&plane, SIDE, SIDE, &square3()), min_max_filter(&plane, SIDE, true));
        assert_eq!(dilate_plane(&plane, SIDE, SIDE, &square3()), min_max_filter(&plane, SIDE, false));
    }
}

#[test]
fn opening_is_anti_extensive_and_idempotent() {
    for shape in [ElementShape::Square, ElementShape::Disc] {
        let se = StructuringElement { shape, size: 5, iterations: 1 };
        for plane in random_masks() {
            let m = hard_from(plane.clone(), SIDE);
            let once = morph_open(&m, &se).unwrap();
            let twice = morph_open(&once, &se).unwrap();
            assert!(once.tensor().data().iter().zip(&plane).all(|(&o, &p)| o <= p));
            assert_eq!(once.tensor().data(), twice.tensor().data());
        }
    }
}

#[test]
fn opening_with_zero_iterations_is_identity() {
    let se = StructuringElement { iterations: 0, ..square3() };
    for plane in random_masks().into_iter().take(10) {
        let m = hard_from(plane.clone(), SIDE);
        assert_eq!(morph_open(&m, &se).unwrap().tensor().data(), &plane[..]);
    }
}

#[test]
fn threshold_matches_elementwise_comparison() {
    let mut r = rng(3);
    for t in [0.1f32, 0.5, 0.73] {
        let mut vals: Vec<f32> = (0..SIDE * SIDE).map(|_| r.random_range(0.0..1.0)).collect();
        vals[0] = t;
        let soft = MaskBatch::new(Tensor::from_vec(&[1, 1, SIDE, SIDE], vals.clone()).unwrap(), MaskKind::Soft).unwrap();
        let hard = threshold(&soft, t).unwrap();
        assert_eq!(hard.kind(), MaskKind::Hard);
        for (h, v) in hard.tensor().data().iter().zip(&vals) {
            assert_eq!(*h, if *v >= t { 1.0 } else { 0.0 });
        }
    }
    let soft = MaskBatch::new(Tensor::zeros(&[1, 1, 2, 2]), MaskKind::Soft).unwrap();
    assert!(threshold(&soft, 0.0).is_err());
    assert!(threshold(&soft, 1.0).is_err());
}

/// Component sizes via recursive-free depth-first flood fill.
fn components(plane: &[f32]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; plane.len()];
    let mut out = Vec::new();
    for start in 0..plane.len() {
        if plane[start] != 1.0 || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (y, x) = ((p / SIDE) as isize, (p % SIDE) as isize);
            for (dy, dx) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                let (yy, xx) = (y + dy, x + dx);
                if at(plane, yy, xx) == 1.0 {
                    let q = yy as usize * SIDE + xx as usize;
                    if !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

#[test]
fn largest_component_matches_flood_fill() {
    for plane in random_masks() {
        let kept = largest_component(&hard_from(plane.clone(), SIDE)).unwrap();
        let comps = components(&plane);
        let best = comps.iter().map(Vec::len).max().unwrap_or(0);
        let on: Vec<usize> = (0..plane.len()).filter(|&i| kept.tensor().data()[i] == 1.0).collect();
        assert_eq!(on.len(), best);
        // The kept pixels form exactly one of the largest components.
        assert!(comps.iter().any(|c| {
            let mut c = c.clone();
            c.sort();
            c == on
        }));
    }
}

#[test]
fn largest_component_on_empty_mask_is_empty() {
    let kept = largest_component(&hard_from(vec![0.0; SIDE * SIDE], SIDE)).unwrap();
    assert!(kept.tensor().data().iter().all(|&v| v == 0.0));
}

#[test]
fn soft_masks_are_rejected_by_morphology() {
    let soft = MaskBatch::new(Tensor::full(&[1, 1, 4, 4], 0.3), MaskKind::Soft).unwrap();
    assert!(morph_open(&soft, &square3()).is_err());
    assert!(largest_component(&soft).is_err());
}

#[test]
fn even_element_sizes_are_invalid() {
    let se = StructuringElement { size: 4, ..square3() };
    assert!(se.validate().is_err());
    let cfg = PostprocessConfig { element: se, ..Default::default() };
    let soft = MaskBatch::new(Tensor::full(&[1, 1, 4, 4], 0.7), MaskKind::Soft).unwrap();
    assert!(cfg.apply(&soft).is_err());
}

#[test]
fn pipeline_removes_specks_and_keeps_the_disc() {
    let mut plane = vec![0.0f32; SIDE * SIDE];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let d = (y as f32 - 16.0).powi(2) + (x as f32 - 16.0).powi(2);
            if d <= 36.0 {
                plane[y * SIDE + x] = 0.9;
            }
        }
    }
    plane[2 * SIDE + 2] = 0.95;
    let soft = MaskBatch::new(Tensor::from_vec(&[1, 1, SIDE, SIDE], plane).unwrap(), MaskKind::Soft).unwrap();
    let cfg = PostprocessConfig { keep_largest: true, ..Default::default() };
    let out = cfg.apply(&soft).unwrap();
    assert_eq!(out.tensor().data()[2 * SIDE + 2], 0.0);
    assert_eq!(out.tensor().data()[16 * SIDE + 16], 1.0);
}
