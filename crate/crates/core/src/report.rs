//! Qualitative panels and PNG encoding of network outputs.
//!
//! Panel layout: one row per example with columns image | ground truth |
//! prediction, each `S × S`, separated and framed by [`GUTTER`]-pixel white
//! bands. Width is `3·S + 4·GUTTER`, height `n·S + (n + 1)·GUTTER`.

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GUTTER: u32 = 8;

/// `(width, height)` of a panel with `rows` examples of side `size`.
pub fn panel_dimensions(rows: usize, size: u32) -> (u32, u32) {
    (3 * size + 4 * GUTTER, rows as u32 * size + (rows as u32 + 1) * GUTTER)
}

/// `round(255·p)` per pixel of a `1×S×S` (or `S×S`) map in `[0, 1]`.
pub fn probability_png(map: &[f32], size: u32) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| {
        let p = map[(y * size + x) as usize];
        Luma([(255.0 * p).round().clamp(0.0, 255.0) as u8])
    })
}

/// 0/255 per pixel of a binary map.
pub fn mask_png(map: &[f32], size: u32) -> GrayImage {
    GrayImage::from_fn(size, size, |x, y| Luma([if map[(y * size + x) as usize] >= 0.5 { 255 } else { 0 }]))
}

/// One example row: the `3×S×S` image and two `1×S×S` masks.
pub struct PanelRow<'a> {
    pub image: &'a Tensor,
    pub truth: &'a Tensor,
    pub prediction: &'a Tensor,
}

pub fn compose_panel(rows: &[PanelRow<'_>]) -> Result<RgbImage> {
    let first = rows.first().ok_or_else(|| Error::Data("a panel needs at least one example".into()))?;
    let size = *first.image.shape().last().unwrap_or(&0) as u32;
    let (w, h) = panel_dimensions(rows.len(), size);
    let mut panel = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let plane = (size * size) as usize;
    for (r, row) in rows.iter().enumerate() {
        if row.image.numel() != 3 * plane || row.truth.numel() != plane || row.prediction.numel() != plane {
            return Err(Error::Shape(format!("panel row {r} does not match the {size}px layout")));
        }
        let top = GUTTER + r as u32 * (size + GUTTER);
        for y in 0..size {
            for x in 0..size {
                let i = (y * size + x) as usize;
                let rgb = |c: usize| (row.image.data()[c * plane + i] * 255.0).round() as u8;
                panel.put_pixel(GUTTER + x, top + y, Rgb([rgb(0), rgb(1), rgb(2)]));
                let t = if row.truth.data()[i] >= 0.5 { 255 } else { 0 };
                panel.put_pixel(2 * GUTTER + size + x, top + y, Rgb([t, t, t]));
                let p = if row.prediction.data()[i] >= 0.5 { 255 } else { 0 };
                panel.put_pixel(3 * GUTTER + 2 * size + x, top + y, Rgb([p, p, p]));
            }
        }
    }
    Ok(panel)
}
