use super::{join, Param, Slot};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    momentum: f32,
    eps: f32,
}

/// Saved state for the backward pass of a training-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub const MOMENTUM: f32 = 0.1;
    pub const EPS: f32 = 1e-5;

    pub fn new(channels: usize) -> Self {
        let mut gamma = Param::zeros(&[channels]);
        gamma.value.fill(1.0);
        BatchNorm2d {
            gamma,
            beta: Param::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.numel()
    }

    fn check(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm expects {} channels, got {c}",
                self.channels()
            )));
        }
        Ok((n, c, h * w))
    }

    /// Normalizes with batch statistics. Running statistics are blended in
    /// only when `update_running` is set.
    pub fn forward_train(&mut self, x: &Tensor, update_running: bool) -> Result<(Tensor, BnCache)> {
        let (n, c, plane) = self.check(x)?;
        let count = n * plane;
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let chunks = (0..n).map(|i| &x.data()[(i * c + ch) * plane..][..plane]);
            let mean = chunks.clone().flatten().map(|&v| v as f64).sum::<f64>() / count as f64;
            let var = chunks
                .flatten()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / count as f64;
            let istd = 1.0 / (var + self.eps as f64).sqrt();
            inv_std[ch] = istd as f32;
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for j in off..off + plane {
                    let xh = ((x.data()[j] as f64 - mean) * istd) as f32;
                    xhat.data_mut()[j] = xh;
                    out.data_mut()[j] = g * xh + b;
                }
            }
            if update_running {
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                let m = self.momentum;
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = (1.0 - m) * *rm + m * mean as f32;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = (1.0 - m) * *rv + m * unbiased as f32;
            }
        }
        Ok((out, BnCache { xhat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, plane) = self.check(x)?;
        let mut out = x.clone();
        for ch in 0..c {
            let istd = 1.0 / (self.running_var.data()[ch] + self.eps).sqrt();
            let scale = self.gamma.value.data()[ch] * istd;
            let shift = self.beta.value.data()[ch] - self.running_mean.data()[ch] * scale;
            for i in 0..n {
                out.data_mut()[(i * c + ch) * plane..][..plane]
                    .iter_mut()
                    .for_each(|v| *v = *v * scale + shift);
            }
        }
        Ok(out)
    }

    /// Accumulates `gamma`/`beta` gradients when `need_dw` and returns the input gradient.
    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor, need_dw: bool) -> Result<Tensor> {
        let (n, c, plane) = self.check(dy)?;
        if cache.xhat.shape() != dy.shape() {
            return Err(Error::Shape("batch norm backward: cache/gradient mismatch".into()));
        }
        let count = (n * plane) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xhat = 0.0f64;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for j in off..off + plane {
                    let g = dy.data()[j] as f64;
                    sum_dy += g;
                    sum_dy_xhat += g * cache.xhat.data()[j] as f64;
                }
            }
            if need_dw {
                self.gamma.grad.data_mut()[ch] += sum_dy_xhat as f32;
                self.beta.grad.data_mut()[ch] += sum_dy as f32;
            }
            let k = self.gamma.value.data()[ch] as f64 * cache.inv_std[ch] as f64 / count;
            let mean_dy = sum_dy;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for j in off..off + plane {
                    let g = dy.data()[j] as f64;
                    let xh = cache.xhat.data()[j] as f64;
                    dx.data_mut()[j] = (k * (count * g - mean_dy - xh * sum_dy_xhat)) as f32;
                }
            }
        }
        Ok(dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor, bool)) {
        f(&join(prefix, "gamma"), &self.gamma.value, true);
        f(&join(prefix, "beta"), &self.beta.value, true);
        f(&join(prefix, "running_mean"), &self.running_mean, false);
        f(&join(prefix, "running_var"), &self.running_var, false);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bn = BatchNorm2d::new(2);
        let x = random(&[3, 2, 4, 4], &mut rng);
        let (y, _) = bn.forward_train(&x, true).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|i| y.data()[(i * 2 + ch) * 16..][..16].to_vec())
                .map(|v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn frozen_statistics_are_left_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut bn = BatchNorm2d::new(2);
        let x = random(&[2, 2, 3, 3], &mut rng);
        bn.forward_train(&x, false).unwrap();
        assert!(bn.running_mean.data().iter().all(|&v| v == 0.0));
        assert!(bn.running_var.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bn = BatchNorm2d::new(3);
        bn.gamma.value = random(&[3], &mut rng);
        bn.beta.value = random(&[3], &mut rng);
        let x = random(&[2, 3, 3, 3], &mut rng);
        let r = random(x.shape(), &mut rng);
        let loss = |bn: &BatchNorm2d, x: &Tensor| -> f64 {
            let mut b = bn.clone();
            let (y, _) = b.forward_train(x, false).unwrap();
            y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
        };
        let (_, cache) = bn.forward_train(&x, false).unwrap();
        let dx = bn.backward(&cache, &r, true).unwrap();
        let h = 1e-2f32;
        for idx in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "dx[{idx}]: {fd} vs {}", dx.data()[idx]);
        }
        for ch in 0..3 {
            let orig = bn.gamma.value.data()[ch];
            let mut probe = bn.clone();
            probe.gamma.value.data_mut()[ch] = orig + h;
            let lp = loss(&probe, &x);
            probe.gamma.value.data_mut()[ch] = orig - h;
            let lm = loss(&probe, &x);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - bn.gamma.grad.data()[ch] as f64).abs() < 1e-2 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn eval_uses_running_statistics() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0 - BatchNorm2d::EPS;
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = bn.forward_eval(&x).unwrap();
        assert!((y.data()[0]).abs() < 1e-6);
        assert!((y.data()[1] - 1.0).abs() < 1e-6);
    }
}
