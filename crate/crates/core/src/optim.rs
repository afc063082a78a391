//! Adam over the learnable tensors of a [`Module`].

use crate::error::{Error, Result};
use crate::nn::{Module, Slot};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("adam epsilon must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per learnable tensor in
/// module visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    names: Vec<String>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(module: &dyn Module, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let (mut names, mut m) = (Vec::new(), Vec::new());
        module.visit("", &mut |name, t, learnable| {
            if learnable {
                names.push(name.to_string());
                m.push(Tensor::zeros(t.shape()));
            }
        });
        let v = m.clone();
        Ok(Adam { cfg, step: 0, names, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `module`.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let step_size = (c.learning_rate / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        let eps = c.eps as f32;
        let mut idx = 0;
        let mut err = None;
        module.visit_mut("", &mut |name, slot| {
            let Slot::Param(p) = slot else { return };
            if err.is_some() {
                return;
            }
            if self.names.get(idx).map(String::as_str) != Some(name) || self.m[idx].shape() != p.value.shape() {
                err = Some(format!("optimizer state does not match parameter `{name}`"));
                return;
            }
            let (m, v) = (self.m[idx].data_mut(), self.v[idx].data_mut());
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *w -= step_size * *mi / (vi.sqrt() * inv_bc2_sqrt + eps);
            }
            idx += 1;
        });
        match err {
            Some(e) => Err(Error::Checkpoint(e)),
            None if idx != self.names.len() => Err(Error::Checkpoint(
                "optimizer state has more tensors than the module".into(),
            )),
            None => Ok(()),
        }
    }

    /// Moment tensors named `m.<param>` and `v.<param>`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let m = self.names.iter().zip(&self.m).map(|(n, t)| (format!("m.{n}"), t.clone()));
        let v = self.names.iter().zip(&self.v).map(|(n, t)| (format!("v.{n}"), t.clone()));
        m.chain(v).collect()
    }

    /// Restores moments and step counter saved by [`Adam::state`].
    pub fn load_state(&mut self, step: u64, entries: &[(String, Tensor)]) -> Result<()> {
        let n = self.names.len();
        if entries.len() != 2 * n {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} tensors, expected {}",
                entries.len(),
                2 * n
            )));
        }
        for (i, name) in self.names.iter().enumerate() {
            for (kind, store, entry) in [("m", &mut self.m, &entries[i]), ("v", &mut self.v, &entries[n + i])] {
                let want = format!("{kind}.{name}");
                if entry.0 != want || entry.1.shape() != store[i].shape() {
                    return Err(Error::Checkpoint(format!(
                        "expected optimizer tensor `{want}` {:?}, found `{}` {:?}",
                        store[i].shape(),
                        entry.0,
                        entry.1.shape()
                    )));
                }
                store[i] = entry.1.clone();
            }
        }
        self.step = step;
        Ok(())
    }
}
