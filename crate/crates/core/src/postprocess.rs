//! Soft map → clean hard mask: threshold, morphological opening and an
//! optional largest-component filter.
//!
//! Pixels outside the image count as background, so erosion shrinks
//! foreground that touches the border.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{MaskBatch, MaskKind, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementShape {
    Square,
    Disc,
}

impl FromStr for ElementShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(ElementShape::Square),
            "disc" => Ok(ElementShape::Disc),
            other => Err(Error::Config(format!("unknown structuring element `{other}` (square or disc)"))),
        }
    }
}

impl fmt::Display for ElementShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementShape::Square => "square",
            ElementShape::Disc => "disc",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    pub shape: ElementShape,
    /// Odd side length.
    pub size: usize,
    pub iterations: usize,
}

impl Default for StructuringElement {
    fn default() -> Self {
        StructuringElement {
            shape: ElementShape::Square,
            size: 3,
            iterations: 1,
        }
    }
}

impl StructuringElement {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 2 == 0 {
            return Err(Error::Config(format!(
                "structuring element size must be odd and ≥ 1, got {}",
                self.size
            )));
        }
        Ok(())
    }

    /// `(dy, dx)` offsets covered by the element, centred on the origin.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = (self.size / 2) as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.shape == ElementShape::Square || dy * dy + dx * dx <= r * r {
                    out.push((dy, dx));
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PostprocessConfig {
    pub threshold: f32,
    pub element: StructuringElement,
    pub keep_largest: bool,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: 0.5,
            element: StructuringElement::default(),
            keep_largest: false,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        self.element.validate()
    }

    /// Threshold, open, then optionally keep the largest component.
    pub fn apply(&self, soft: &MaskBatch) -> Result<MaskBatch> {
        self.validate()?;
        let mut hard = threshold(soft, self.threshold)?;
        hard = morph_open(&hard, &self.element)?;
        if self.keep_largest {
            hard = largest_component(&hard)?;
        }
        Ok(hard)
    }
}

/// `value ≥ t → 1`, else 0.
pub fn threshold(soft: &MaskBatch, t: f32) -> Result<MaskBatch> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {t}")));
    }
    let out = soft.tensor().map(|v| if v >= t { 1.0 } else { 0.0 });
    MaskBatch::new(out, MaskKind::Hard)
}

fn require_hard(m: &MaskBatch) -> Result<()> {
    if m.kind() != MaskKind::Hard {
        return Err(Error::Shape("morphology needs a hard mask".into()));
    }
    Ok(())
}

/// Applies `f` to every `h×w` plane of a hard mask batch.
fn per_plane(m: &MaskBatch, f: impl Fn(&[f32], usize, usize) -> Vec<f32>) -> Result<MaskBatch> {
    require_hard(m)?;
    let (b, _, h, w) = m.tensor().dims4()?;
    let mut data = Vec::with_capacity(b * h * w);
    for n in 0..b {
        data.extend(f(m.tensor().sample(n), h, w));
    }
    MaskBatch::new(Tensor::from_vec(m.tensor().shape(), data)?, MaskKind::Hard)
}

fn filter(plane: &[f32], h: usize, w: usize, offsets: &[(isize, isize)], erode: bool) -> Vec<f32> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let hit = |&(dy, dx): &(isize, isize)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && plane[yy as usize * w + xx as usize] == 1.0
            };
            let on = if erode { offsets.iter().all(hit) } else { offsets.iter().any(hit) };
            out[y * w + x] = if on { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Erosion of one `h×w` plane (min filter over the element).
pub fn erode_plane(plane: &[f32], h: usize, w: usize, se: &StructuringElement) -> Vec<f32> {
    filter(plane, h, w, &se.offsets(), true)
}

/// Dilation of one `h×w` plane (max filter over the element).
pub fn dilate_plane(plane: &[f32], h: usize, w: usize, se: &StructuringElement) -> Vec<f32> {
    filter(plane, h, w, &se.offsets(), false)
}

/// `iterations` erosions followed by as many dilations.
pub fn morph_open(m: &MaskBatch, se: &StructuringElement) -> Result<MaskBatch> {
    se.validate()?;
    per_plane(m, |plane, h, w| {
        let mut cur = plane.to_vec();
        for _ in 0..se.iterations {
            cur = erode_plane(&cur, h, w, se);
        }
        for _ in 0..se.iterations {
            cur = dilate_plane(&cur, h, w, se);
        }
        cur
    })
}

/// Keeps the largest 8-connected foreground region of each plane. Ties go
/// to the region reached first in raster order.
pub fn largest_component(m: &MaskBatch) -> Result<MaskBatch> {
    per_plane(m, |plane, h, w| {
        let mut label = vec![0usize; h * w];
        let (mut best, mut best_size, mut next) = (0, 0, 1);
        let mut queue = VecDeque::new();
        for start in 0..h * w {
            if plane[start] != 1.0 || label[start] != 0 {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            let mut size = 0;
            while let Some(p) = queue.pop_front() {
                size += 1;
                let (y, x) = ((p / w) as isize, (p % w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy as usize >= h || xx as usize >= w {
                            continue;
                        }
                        let q = yy as usize * w + xx as usize;
                        if plane[q] == 1.0 && label[q] == 0 {
                            label[q] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
            if size > best_size {
                best = next;
                best_size = size;
            }
            next += 1;
        }
        label
            .iter()
            .map(|&l| if l != 0 && l == best { 1.0 } else { 0.0 })
            .collect()
    })
}
