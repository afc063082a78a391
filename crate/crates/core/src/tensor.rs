//! Dense row-major `f32` tensors and the batch newtypes that flow between
//! the data pipeline, the networks and the losses.

use crate::error::{Error, Result};

/// Dense row-major tensor. Activations use NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a rank-4 NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn fill(&mut self, value: f32) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous slice holding sample `n` of a batch-major tensor.
    pub fn sample(&self, n: usize) -> &[f32] {
        let per = self.data.len() / self.shape[0];
        &self.data[n * per..(n + 1) * per]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f32] {
        let per = self.data.len() / self.shape[0];
        &mut self.data[n * per..(n + 1) * per]
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (na, ca, ha, wa) = a.dims4()?;
        let (nb, cb, hb, wb) = b.dims4()?;
        if na != nb || ha != hb || wa != wb {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.shape, b.shape
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        for n in 0..na {
            data.extend_from_slice(&a.data[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&b.data[n * cb * plane..(n + 1) * cb * plane]);
        }
        Ok(Tensor {
            shape: vec![na, ca + cb, ha, wa],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: split after the first `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> Result<(Tensor, Tensor)> {
        let (n, c, h, w) = self.dims4()?;
        if c_first > c {
            return Err(Error::Shape(format!(
                "cannot split {c} channels at {c_first}"
            )));
        }
        let plane = h * w;
        let c_second = c - c_first;
        let mut first = Vec::with_capacity(n * c_first * plane);
        let mut second = Vec::with_capacity(n * c_second * plane);
        for i in 0..n {
            let base = i * c * plane;
            first.extend_from_slice(&self.data[base..base + c_first * plane]);
            second.extend_from_slice(&self.data[base + c_first * plane..base + c * plane]);
        }
        Ok((
            Tensor {
                shape: vec![n, c_first, h, w],
                data: first,
            },
            Tensor {
                shape: vec![n, c_second, h, w],
                data: second,
            },
        ))
    }

    /// Stack equally shaped `[C, H, W]` samples into an `[N, C, H, W]` batch.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        for s in samples {
            if s.shape != first.shape {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    s.shape, first.shape
                )));
            }
            data.extend_from_slice(&s.data);
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}

/// Normalized fundus images, `B×3×S×S` with every value in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        if c != 3 || h != w {
            return Err(Error::Shape(format!(
                "image batch must be B×3×S×S, got {:?}",
                t.shape()
            )));
        }
        if let Some(i) = t.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape(format!(
                "image value {} at index {i} is outside [0, 1]",
                t.data()[i]
            )));
        }
        Ok(ImageBatch(t))
    }

    pub fn batch_size(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Probabilities in `[0, 1]`.
    Soft,
    /// Values in `{0, 1}`.
    Hard,
}

/// Single-channel masks, `B×1×S×S`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskBatch {
    tensor: Tensor,
    kind: MaskKind,
}

impl MaskBatch {
    pub fn new(t: Tensor, kind: MaskKind) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        if c != 1 || h != w {
            return Err(Error::Shape(format!(
                "mask batch must be B×1×S×S, got {:?}",
                t.shape()
            )));
        }
        for (i, &v) in t.data().iter().enumerate() {
            let ok = match kind {
                MaskKind::Soft => (0.0..=1.0).contains(&v),
                MaskKind::Hard => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::NonBinary { index: i, value: v });
            }
        }
        Ok(MaskBatch { tensor: t, kind })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn batch_size(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn size(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

/// Discriminator patch scores, `B×1×P×P`, every value strictly inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap(Tensor);

impl ScoreMap {
    pub fn new(t: Tensor) -> Result<Self> {
        let (_, c, _, _) = t.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "score map must have one channel, got {:?}",
                t.shape()
            )));
        }
        if let Some(i) = t.data().iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Shape(format!(
                "score {} at index {i} is outside (0, 1)",
                t.data()[i]
            )));
        }
        Ok(ScoreMap(t))
    }

    /// Builds a map of the given shape filled with `value`; handy in tests and
    /// for loss sanity checks.
    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        ScoreMap::new(Tensor::full(shape, value))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}
