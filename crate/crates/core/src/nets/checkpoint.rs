//! Versioned binary container for parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "VCAECKPT"
//! version    u32
//! adam       4 x f64  learning rate, beta1, beta2, eps
//! count      u32      number of records
//! records:
//!   kind     u8       0 = parameter, 1 = buffer
//!   name     u32 length + UTF-8 bytes
//!   ndim     u32, then ndim x u64 dimensions
//!   step     u64      ADAM timestep (parameters only)
//!   payload  n x f64  value; parameters follow with n x f64 first moment
//!                     and n x f64 second moment
//! crc32      u32      over every preceding byte
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::store::{ParamEntry, ParamStore, StoreError};
use crate::numerics::{AdamConfig, AdamState, Tensor};

pub const MAGIC: &[u8; 8] = b"VCAECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed record at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("checkpoint parameters do not match the model: missing {missing:?}, unexpected {unexpected:?}")]
    NameSetMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("parameter `{name}` has shape {found:?} in the checkpoint but {expected:?} in the model")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_header(out: &mut Vec<u8>, kind: u8, name: &str, shape: &[usize]) {
    out.push(kind);
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
}

pub fn encode_store(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let a = store.adam_config();
    put_f64s(&mut out, &[a.learning_rate, a.beta1, a.beta2, a.eps]);
    put_u32(&mut out, (store.len() + store.buffers().count()) as u32);
    for (name, e) in store.entries() {
        put_header(&mut out, 0, name, e.value.shape());
        put_u64(&mut out, e.adam.t);
        put_f64s(&mut out, e.value.data());
        put_f64s(&mut out, e.adam.m.data());
        put_f64s(&mut out, e.adam.v.data());
    }
    for (name, t) in store.buffers() {
        put_header(&mut out, 1, name, t.shape());
        put_f64s(&mut out, t.data());
    }
    let crc = crc32fast::hash(&out);
    put_u32(&mut out, crc);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let offset = self.pos;
        let len = n.checked_mul(8).ok_or(CheckpointError::Malformed {
            offset,
            reason: "payload size overflows".into(),
        })?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn tensor(&mut self, shape: &[usize]) -> Result<Tensor, CheckpointError> {
        let offset = self.pos;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(CheckpointError::Malformed {
            offset,
            reason: format!("shape {shape:?} overflows"),
        })?;
        Tensor::new(shape, self.f64s(n)?).map_err(|e| CheckpointError::Malformed {
            offset,
            reason: e.to_string(),
        })
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            return Err(CheckpointError::Truncated {
                offset: bytes.len(),
                needed: MAGIC.len() - bytes.len(),
            });
        }
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    // Integrity before interpretation: a truncated body also fails here.
    if bytes.len() < r.pos + 4 {
        return Err(CheckpointError::Truncated {
            offset: r.pos,
            needed: 4,
        });
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: r.pos,
    };
    let hp = r.f64s(4)?;
    let adam = AdamConfig {
        learning_rate: hp[0],
        beta1: hp[1],
        beta2: hp[2],
        eps: hp[3],
    };
    let mut store = ParamStore::with_adam(adam);
    let count = r.u32()?;
    for _ in 0..count {
        let offset = r.pos;
        let kind = r.u8()?;
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| CheckpointError::Malformed {
            offset,
            reason: "record name is not UTF-8".into(),
        })?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        match kind {
            0 => {
                let t = r.u64()?;
                let value = r.tensor(&shape)?;
                let m = r.tensor(&shape)?;
                let v = r.tensor(&shape)?;
                let entry = ParamEntry {
                    grad: Tensor::zeros(&shape),
                    adam: AdamState { m, v, t, config: adam },
                    value,
                };
                store.insert_entry(name, entry)?;
            }
            1 => {
                let value = r.tensor(&shape)?;
                store.set_buffer(&name, value)?;
            }
            other => {
                return Err(CheckpointError::Malformed {
                    offset,
                    reason: format!("unknown record kind {other}"),
                })
            }
        }
    }
    if r.pos != r.bytes.len() {
        return Err(CheckpointError::Malformed {
            offset: r.pos,
            reason: "trailing bytes after last record".into(),
        });
    }
    Ok(store)
}

pub fn checkpoint_save(store: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode_store(store)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn checkpoint_load(path: &Path) -> Result<ParamStore, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_store(&bytes)
}

/// Checks that `loaded` has exactly the parameter names and shapes of `model`.
pub fn check_compatible(model: &ParamStore, loaded: &ParamStore) -> Result<(), CheckpointError> {
    let want: BTreeSet<&str> = model.names().collect();
    let have: BTreeSet<&str> = loaded.names().collect();
    if want != have {
        return Err(CheckpointError::NameSetMismatch {
            missing: want.difference(&have).map(|s| s.to_string()).collect(),
            unexpected: have.difference(&want).map(|s| s.to_string()).collect(),
        });
    }
    for (name, e) in model.entries() {
        let other = loaded.entry(loaded.id(name)?);
        if other.value.shape() != e.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_owned(),
                found: other.value.shape().to_vec(),
                expected: e.value.shape().to_vec(),
            });
        }
    }
    Ok(())
}
