//! Single-file training archive.
//!
//! Layout: the 8-byte magic `ODCGAN01`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor's values as little-endian `f32`
//! back to back. The header lists each tensor's name, shape, dtype and byte
//! offset into the data section, plus the training counters, the config
//! fingerprint and the random-number generator position.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ODCGAN01";
const FORMAT_VERSION: u32 = 1;

/// Adam moments and update counter for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: ParameterSet,
    pub discriminator: ParameterSet,
    pub generator_optimizer: OptimizerState,
    pub discriminator_optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed training steps.
    pub step: u64,
    /// Hash of the resolved run configuration that produced this state.
    pub fingerprint: String,
    pub rng: RngState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    epoch: u64,
    step: u64,
    fingerprint: String,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    generator_optimizer_step: u64,
    discriminator_optimizer_step: u64,
    /// Tensor counts of the four groups, in archive order.
    groups: [usize; 4],
    tensors: Vec<TensorEntry>,
}

const GENERATOR_ADAM: &str = "adam.generator.";
const DISCRIMINATOR_ADAM: &str = "adam.discriminator.";

impl Checkpoint {
    fn groups(&self) -> [Vec<(String, &Tensor)>; 4] {
        fn plain(p: &ParameterSet) -> Vec<(String, &Tensor)> {
            p.iter().map(|(n, t)| (n.to_string(), t)).collect()
        }
        fn adam<'a>(prefix: &str, s: &'a OptimizerState) -> Vec<(String, &'a Tensor)> {
            s.tensors.iter().map(|(n, t)| (format!("{prefix}{n}"), t)).collect()
        }
        [
            plain(&self.generator),
            plain(&self.discriminator),
            adam(GENERATOR_ADAM, &self.generator_optimizer),
            adam(DISCRIMINATOR_ADAM, &self.discriminator_optimizer),
        ]
    }

    /// Streams the archive into `w`.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let groups = self.groups();
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (name, t) in groups.iter().flatten() {
            tensors.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
            });
            offset += 4 * t.numel() as u64;
        }
        let header = Header {
            format: FORMAT_VERSION,
            epoch: self.epoch,
            step: self.step,
            fingerprint: self.fingerprint.clone(),
            rng_seed: hex::encode(self.rng.seed),
            rng_stream: self.rng.stream,
            rng_word_pos: self.rng.word_pos.to_string(),
            generator_optimizer_step: self.generator_optimizer.step,
            discriminator_optimizer_step: self.discriminator_optimizer.step,
            groups: [groups[0].len(), groups[1].len(), groups[2].len(), groups[3].len()],
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, t) in groups.iter().flatten() {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.format)));
        }
        let data = &bytes[16 + hlen..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if e.dtype != "f32" || e.offset != expected {
                return Err(Error::Checkpoint(format!("tensor `{}` has an unexpected dtype or offset", e.name)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` is truncated", e.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            expected += 4 * n as u64;
            tensors.push((e.name, Tensor::from_vec(&e.shape, values)?));
        }
        if expected as usize != data.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        if header.groups.iter().sum::<usize>() != tensors.len() {
            return Err(bad("group sizes do not add up to the tensor count"));
        }
        let mut rest = tensors.into_iter();
        let mut take = |n: usize| rest.by_ref().take(n).collect::<Vec<_>>();
        let generator = ParameterSet::new(take(header.groups[0]))?;
        let discriminator = ParameterSet::new(take(header.groups[1]))?;
        let strip = |prefix: &str, v: Vec<(String, Tensor)>| -> Result<Vec<(String, Tensor)>> {
            v.into_iter()
                .map(|(n, t)| match n.strip_prefix(prefix) {
                    Some(s) => Ok((s.to_string(), t)),
                    None => Err(Error::Checkpoint(format!("optimizer tensor `{n}` lacks prefix `{prefix}`"))),
                })
                .collect()
        };
        let g_adam = strip(GENERATOR_ADAM, take(header.groups[2]))?;
        let d_adam = strip(DISCRIMINATOR_ADAM, take(header.groups[3]))?;

        let seed: [u8; 32] = hex::decode(&header.rng_seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| bad("bad rng seed"))?;
        let word_pos = header.rng_word_pos.parse().map_err(|_| bad("bad rng position"))?;
        Ok(Checkpoint {
            generator,
            discriminator,
            generator_optimizer: OptimizerState {
                step: header.generator_optimizer_step,
                tensors: g_adam,
            },
            discriminator_optimizer: OptimizerState {
                step: header.discriminator_optimizer_step,
                tensors: d_adam,
            },
            epoch: header.epoch,
            step: header.step,
            fingerprint: header.fingerprint,
            rng: RngState {
                seed,
                stream: header.rng_stream,
                word_pos,
            },
        })
    }

    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = temp_sibling(path);
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    PathBuf::from(tmp)
}

/// Replaces `path` with `bytes` so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let tmp = tmp.as_path();
    let mut f = fs::File::create(tmp).map_err(|e| Error::io(tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(tmp, e))?;
    f.sync_all().map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}
