//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DQR1"
//! u64 descriptor length, descriptor bytes (UTF-8 TOML: model section + vocab)
//! u64 parameter count, then per tensor:
//!     u64 name length, name bytes, u64 rank, rank × u64 dims, f64 payload
//! u64 training-state tensor count, tensors in the same format
//!     (Adam moments, carried recurrent state)
//! u64 step counter
//! RNG: 32 seed bytes, u64 stream, u128 word position
//! ```

use std::fs;
use std::io;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelSection;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DQR1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt checkpoint: {0}")]
    Format(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Format(msg.into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Exact position of a ChaCha8 generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
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

/// Architecture and vocabulary, stored as the checkpoint's text header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Descriptor {
    pub model: ModelSection,
    pub vocab: VocabSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    pub code_points: Vec<u32>,
}

impl Descriptor {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        toml::from_str(text).map_err(|e| corrupt(format!("bad descriptor: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor: String,
    pub params: Vec<NamedTensor>,
    pub state: Vec<NamedTensor>,
    pub step: u64,
    pub rng: RngState,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensors(out: &mut Vec<u8>, tensors: &[NamedTensor]) {
    put_u64(out, tensors.len() as u64);
    for nt in tensors {
        put_u64(out, nt.name.len() as u64);
        out.extend_from_slice(nt.name.as_bytes());
        put_u64(out, nt.tensor.rank() as u64);
        for &d in nt.tensor.shape() {
            put_u64(out, d as u64);
        }
        for v in nt.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        let v = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if v > remaining {
            return Err(corrupt(format!("length {v} exceeds the {remaining} remaining bytes")));
        }
        Ok(v as usize)
    }

    fn tensors(&mut self) -> Result<Vec<NamedTensor>, CheckpointError> {
        let count = self.len()?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = self.len()?;
            let name = std::str::from_utf8(self.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = self.len()?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.len()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.buf.len() - self.pos))
                .ok_or_else(|| corrupt(format!("tensor {name} has an impossible shape {shape:?}")))?;
            let payload = self.take(n * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| corrupt(format!("tensor {name}: {e}")))?;
            out.push(NamedTensor { name, tensor });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u64(&mut out, self.descriptor.len() as u64);
        out.extend_from_slice(self.descriptor.as_bytes());
        put_tensors(&mut out, &self.params);
        put_tensors(&mut out, &self.state);
        put_u64(&mut out, self.step);
        out.extend_from_slice(&self.rng.seed);
        put_u64(&mut out, self.rng.stream);
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let dlen = r.len()?;
        let descriptor = std::str::from_utf8(r.take(dlen)?)
            .map_err(|_| corrupt("descriptor is not UTF-8"))?
            .to_string();
        let params = r.tensors()?;
        let state = r.tensors()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != buf.len() {
            return Err(corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            descriptor,
            params,
            state,
            step,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn descriptor(&self) -> Result<Descriptor, CheckpointError> {
        Descriptor::from_text(&self.descriptor)
    }
}
