use std::collections::HashSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Module, Slot};
use crate::tensor::Tensor;

/// Ordered, uniquely named snapshot of a module's tensors (weights, biases
/// and batch-norm statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, t) in &entries {
            if !seen.insert(name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor name `{name}`")));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` holds non-finite values")));
            }
        }
        Ok(ParameterSet { entries })
    }

    pub fn from_module(m: &dyn Module) -> Self {
        let mut entries = Vec::new();
        m.visit("", &mut |name, t, _| entries.push((name.to_string(), t.clone())));
        ParameterSet { entries }
    }

    /// Copies every tensor into `m`. Names and shapes must line up exactly.
    pub fn load_into(&self, m: &mut dyn Module) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        m.visit_mut("", &mut |name, slot| {
            if err.is_some() {
                return;
            }
            let Some((src_name, src)) = self.entries.get(idx) else {
                err = Some(format!("missing tensor `{name}`"));
                return;
            };
            idx += 1;
            let dst = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            if src_name != name || src.shape() != dst.shape() {
                err = Some(format!(
                    "expected `{name}` {:?}, found `{src_name}` {:?}",
                    dst.shape(),
                    src.shape()
                ));
                return;
            }
            dst.data_mut().copy_from_slice(src.data());
        });
        if let Some(e) = err {
            return Err(Error::Checkpoint(e));
        }
        if idx != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected extra tensors",
                self.entries.len() - idx
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }
}
