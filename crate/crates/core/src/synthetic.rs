//! Synthetic fundus-like images with known disc masks, for smoke tests and
//! demos when no real dataset is at hand.
//!
//! Each image is a dark orange retinal field inside a black surround, with
//! a few darker vessel arcs and one bright yellowish elliptical disc whose
//! binarized footprint is the ground-truth mask.

use std::fs;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::write_split;
use crate::error::{Error, Result};

/// One rendered sample.
pub struct SyntheticSample {
    pub image: RgbImage,
    /// 0 or 255 per pixel.
    pub mask: GrayImage,
}

/// Renders a `size × size` sample; identical for identical `seed`.
pub fn render(size: u32, seed: u64) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let (cx, cy) = (s * rng.random_range(0.3..0.7), s * rng.random_range(0.3..0.7));
    let (rx, ry) = (s * rng.random_range(0.07..0.11), s * rng.random_range(0.08..0.12));
    let tint: f32 = rng.random_range(0.85..1.0);
    let vessels: Vec<(f32, f32, f32)> = (0..4)
        .map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s), rng.random_range(0.2..0.45) * s))
        .collect();
    let mut image = RgbImage::new(size, size);
    let mut mask = GrayImage::new(size, size);
    let half = s / 2.0;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let field = ((fx - half).powi(2) + (fy - half).powi(2)).sqrt() / (0.48 * s);
            let disc = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
            let noise: f32 = rng.random_range(-6.0..6.0);
            let mut px = if field > 1.0 {
                [0.0, 0.0, 0.0]
            } else {
                let shade = 1.0 - 0.45 * field * field;
                [150.0 * shade * tint, 60.0 * shade, 25.0 * shade]
            };
            if field <= 1.0 {
                for &(vx, vy, vr) in &vessels {
                    let d = (((fx - vx).powi(2) + (fy - vy).powi(2)).sqrt() - vr).abs();
                    if d < 1.5 {
                        px = [px[0] * 0.6, px[1] * 0.5, px[2] * 0.5];
                    }
                }
            }
            if disc <= 1.0 {
                let glow = 1.0 - 0.25 * disc;
                px = [245.0 * glow, 215.0 * glow, 120.0 * glow];
                mask.put_pixel(x, y, Luma([255]));
            }
            let c = |v: f32| (v + noise).clamp(0.0, 255.0) as u8;
            image.put_pixel(x, y, Rgb([c(px[0]), c(px[1]), c(px[2])]));
        }
    }
    SyntheticSample { image, mask }
}

/// Writes `n` samples as `<root>/images/synth_NNN.png` and
/// `<root>/masks/synth_NNN.png`, plus a `split.txt` putting the first
/// `n_train` in train and the rest in test. Returns the ids.
pub fn write_dataset(root: &Path, n: usize, n_train: usize, size: u32, seed: u64) -> Result<Vec<String>> {
    let images = root.join("images");
    let masks = root.join("masks");
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ids: Vec<String> = (0..n).map(|i| format!("synth_{i:03}")).collect();
    for (i, id) in ids.iter().enumerate() {
        let sample = render(size, seed.wrapping_add(i as u64));
        let ip = images.join(format!("{id}.png"));
        sample.image.save(&ip).map_err(|e| Error::image(&ip, e))?;
        let mp = masks.join(format!("{id}.png"));
        sample.mask.save(&mp).map_err(|e| Error::image(&mp, e))?;
    }
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let n_train = n_train.min(n);
    write_split(&root.join("split.txt"), &refs[..n_train], &refs[n_train..])?;
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_seeded_and_mask_is_binary() {
        let a = render(64, 5);
        let b = render(64, 5);
        assert_eq!(a.image, b.image);
        assert!(a.mask.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        let on = a.mask.pixels().filter(|p| p.0[0] == 255).count();
        assert!(on > 50 && on < 64 * 64 / 4, "disc area {on}");
    }
}
