//! Dataset discovery, preprocessing and mini-batch iteration.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/images/<id>.png|jpg|jpeg
//! <root>/masks/<id>.png          8-bit grayscale, disc bright (≥ 128)
//! <root>/split.txt               optional; lines `train <id>` / `test <id>`
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, GrayImage};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ImageBatch, MaskBatch, MaskKind, Tensor};

pub const IMAGE_SIZE: usize = 256;
pub const MASK_THRESHOLD: u8 = 128;
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    DrishtiGs1,
    RimOne,
    Custom,
}

impl DatasetKind {
    /// `(train, test)` sizes of the standard split.
    pub fn standard_split(self) -> Option<(usize, usize)> {
        match self {
            DatasetKind::DrishtiGs1 => Some((50, 51)),
            DatasetKind::RimOne => Some((100, 69)),
            DatasetKind::Custom => None,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drishti-gs1" => Ok(DatasetKind::DrishtiGs1),
            "rim-one" => Ok(DatasetKind::RimOne),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(Error::Config(format!(
                "unknown dataset kind `{other}` (expected drishti-gs1, rim-one or custom)"
            ))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::DrishtiGs1 => "drishti-gs1",
            DatasetKind::RimOne => "rim-one",
            DatasetKind::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FundusSample {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    /// `(height, width)` in pixels.
    pub original_size: (u32, u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: DatasetKind,
    pub root: PathBuf,
    pub train: Vec<FundusSample>,
    pub test: Vec<FundusSample>,
}

fn stems(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(ext) = path.extension().and_then(|e| e.to_str()) else {
            continue;
        };
        if !extensions.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if out.insert(stem.to_string(), path.clone()).is_some() {
            return Err(Error::Data(format!(
                "duplicate id `{stem}` in {}",
                dir.display()
            )));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    Train,
    Test,
}

fn parse_split(path: &Path) -> Result<Vec<(Part, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(tag), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Data(format!(
                "{}:{}: expected `train <id>` or `test <id>`",
                path.display(),
                lineno + 1
            )));
        };
        let part = match tag {
            "train" => Part::Train,
            "test" => Part::Test,
            other => {
                return Err(Error::Data(format!(
                    "{}:{}: unknown split tag `{other}`",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push((part, id.to_string()));
    }
    Ok(out)
}

/// Scans `root`, pairs images with masks by file stem and assigns samples to
/// train/test. Without a split file (explicit or `<root>/split.txt`) every
/// sample goes to train. Ids come out sorted.
pub fn load_manifest(root: &Path, kind: DatasetKind, split_file: Option<&Path>) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Data(format!("dataset root {} is not a directory", root.display())));
    }
    let images = stems(&root.join("images"), &IMAGE_EXTENSIONS)?;
    if images.is_empty() {
        return Err(Error::Data(format!("no images found under {}", root.join("images").display())));
    }
    let masks = stems(&root.join("masks"), &["png"])?;

    let default_split = root.join("split.txt");
    let split_path = match split_file {
        Some(p) => Some(p.to_path_buf()),
        None if default_split.is_file() => Some(default_split),
        None => None,
    };

    let sample = |id: &str| -> Result<FundusSample> {
        let image_path = images
            .get(id)
            .ok_or_else(|| Error::Data(format!("split lists `{id}` but no image exists for it")))?
            .clone();
        let (w, h) = image::image_dimensions(&image_path).map_err(|e| Error::image(&image_path, e))?;
        Ok(FundusSample {
            id: id.to_string(),
            image_path,
            mask_path: masks.get(id).cloned(),
            original_size: (h, w),
        })
    };

    let (mut train, mut test) = (Vec::new(), Vec::new());
    match &split_path {
        Some(path) => {
            let mut seen: BTreeSet<String> = BTreeSet::new();
            for (part, id) in parse_split(path)? {
                if !seen.insert(id.clone()) {
                    return Err(Error::Data(format!("id `{id}` appears more than once in {}", path.display())));
                }
                match part {
                    Part::Train => train.push(sample(&id)?),
                    Part::Test => test.push(sample(&id)?),
                }
            }
            let unlisted = images.keys().filter(|id| !seen.contains(*id)).count();
            if unlisted > 0 {
                warn!("{unlisted} images under {} are not in the split and are ignored", root.display());
            }
        }
        None => {
            for id in images.keys() {
                train.push(sample(id)?);
            }
            warn!(
                "no split file for {}: all {} samples assigned to train, test split is empty",
                root.display(),
                train.len()
            );
        }
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    test.sort_by(|a, b| a.id.cmp(&b.id));

    if train.is_empty() {
        return Err(Error::Data("train split is empty".into()));
    }
    if let Some(s) = train.iter().find(|s| s.mask_path.is_none()) {
        return Err(Error::Data(format!("training sample `{}` has no mask", s.id)));
    }
    if let (Some((n_train, n_test)), Some(path)) = (kind.standard_split(), &split_path) {
        if train.len() != n_train || test.len() != n_test {
            return Err(Error::Data(format!(
                "{kind} standard split is {n_train} train / {n_test} test, but {} gives {} / {}",
                path.display(),
                train.len(),
                test.len()
            )));
        }
    }
    Ok(DatasetManifest {
        name: kind,
        root: root.to_path_buf(),
        train,
        test,
    })
}

/// Writes a split file in the format [`load_manifest`] reads.
pub fn write_split(path: &Path, train: &[&str], test: &[&str]) -> Result<()> {
    let mut text = String::new();
    for id in train {
        text.push_str(&format!("train {id}\n"));
    }
    for id in test {
        text.push_str(&format!("test {id}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Bilinear resampling of a planar `channels×h×w` buffer with half-pixel
/// centres and edge clamping (no antialiasing).
pub fn resize_bilinear(src: &[f32], channels: usize, h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = vec![0.0; channels * out_h * out_w];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(c * out_h + oy) * out_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Bilinear resize to `size × size` and scaling to `[0, 1]`; returns `3×size×size`.
pub fn preprocess_image(img: &DynamicImage, size: usize) -> Result<Tensor> {
    use image::ColorType::*;
    match img.color() {
        Rgb8 | Rgba8 | Rgb16 | Rgba16 | Rgb32F | Rgba32F => {}
        other => {
            return Err(Error::Channel(format!(
                "fundus images must be RGB, got {other:?}"
            )))
        }
    }
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planar = vec![0.0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            planar[c * h * w + i] = px.0[c] as f32;
        }
    }
    let mut data = resize_bilinear(&planar, 3, h, w, size, size);
    data.iter_mut().for_each(|v| *v = (*v / 255.0).clamp(0.0, 1.0));
    Tensor::from_vec(&[3, size, size], data)
}

/// Fraction of pixels that are neither clearly dark nor clearly bright.
pub fn mid_tone_fraction(gray: &GrayImage) -> f64 {
    let n = (gray.width() * gray.height()).max(1) as f64;
    gray.pixels().filter(|p| (32..224).contains(&p.0[0])).count() as f64 / n
}

/// Nearest-neighbour resize to `size × size`, then `value ≥ threshold → 1`.
/// Colour masks are collapsed to luma first.
pub fn binarize_mask(img: &DynamicImage, size: usize, threshold: u8) -> Result<Tensor> {
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Data("empty mask image".into()));
    }
    let mid = mid_tone_fraction(&gray);
    if mid > 0.05 {
        warn!("mask is not cleanly bimodal: {:.1}% mid-tone pixels", mid * 100.0);
    }
    let nearest = |o: usize, inp: usize| (((o as f64 + 0.5) * inp as f64 / size as f64) as usize).min(inp - 1);
    let mut data = Vec::with_capacity(size * size);
    for oy in 0..size {
        let sy = nearest(oy, h);
        for ox in 0..size {
            let sx = nearest(ox, w);
            data.push(if gray.get_pixel(sx as u32, sy as u32).0[0] >= threshold { 1.0 } else { 0.0 });
        }
    }
    Tensor::from_vec(&[1, size, size], data)
}

pub fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::image(path, e))
}

/// Preprocessed tensors for one split, held in memory.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub ids: Vec<String>,
    pub images: Vec<Tensor>,
    pub masks: Vec<Option<Tensor>>,
}

impl LoadedSplit {
    pub fn load(samples: &[FundusSample], size: usize) -> Result<Self> {
        let mut split = LoadedSplit {
            ids: Vec::with_capacity(samples.len()),
            images: Vec::with_capacity(samples.len()),
            masks: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            split.ids.push(s.id.clone());
            split.images.push(preprocess_image(&open_image(&s.image_path)?, size)?);
            split.masks.push(match &s.mask_path {
                Some(p) => Some(binarize_mask(&open_image(p)?, size, MASK_THRESHOLD)?),
                None => None,
            });
        }
        Ok(split)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Assembles the samples at `indices` into a batch; every sample needs a mask.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images: Vec<&Tensor> = indices.iter().map(|&i| &self.images[i]).collect();
        let masks = indices
            .iter()
            .map(|&i| {
                self.masks[i]
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("sample `{}` has no mask", self.ids[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            images: ImageBatch::new(Tensor::stack(&images)?)?,
            masks: MaskBatch::new(Tensor::stack(&masks)?, MaskKind::Hard)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: ImageBatch,
    pub masks: MaskBatch,
}

/// Sample indices grouped into batches. The last batch may be partial.
/// Without shuffling the order is the split's (lexicographic) order.
pub fn batch_order(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::Data("cannot iterate an empty split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Batches for one pass over `split`.
pub fn iterate_batches(
    split: &LoadedSplit,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<impl Iterator<Item = Result<Batch>> + '_> {
    let order = batch_order(split.len(), batch_size, shuffle, seed)?;
    Ok(order.into_iter().map(move |idx| split.batch(&idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};

    #[test]
    fn uniform_images_normalize_to_endpoints() {
        for (v, want) in [(255u8, 1.0f32), (0, 0.0)] {
            let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(40, 30, Rgb([v, v, v])));
            let t = preprocess_image(&img, 16).unwrap();
            assert_eq!(t.shape(), &[3, 16, 16]);
            assert!(t.data().iter().all(|&x| x == want));
        }
    }

    #[test]
    fn grayscale_input_is_a_channel_error() {
        let img = DynamicImage::ImageLuma8(GrayImage::new(8, 8));
        assert!(matches!(preprocess_image(&img, 4), Err(Error::Channel(_))));
    }

    #[test]
    fn mask_threshold_is_inclusive() {
        for (v, want) in [(255u8, 1.0f32), (0, 0.0), (128, 1.0), (127, 0.0)] {
            let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(5, 5, Luma([v])));
            let t = binarize_mask(&img, 4, MASK_THRESHOLD).unwrap();
            assert!(t.data().iter().all(|&x| x == want), "pixel {v}");
        }
    }

    #[test]
    fn batch_counts_and_partial_last_batch() {
        let b = batch_order(50, 4, true, 3).unwrap();
        assert_eq!(b.len(), 13);
        assert_eq!(b.last().unwrap().len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(batch_order(5, 2, false, 0).unwrap(), vec![vec![0, 1], vec![2, 3], vec![4]]);
        assert_eq!(b, batch_order(50, 4, true, 3).unwrap());
        assert!(batch_order(0, 4, false, 0).is_err());
        assert!(batch_order(3, 0, false, 0).is_err());
    }
}
