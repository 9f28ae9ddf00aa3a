//! Binary checkpoint format ("KSTL").
//!
//! ```text
//! magic        4 bytes   "KSTL"
//! version      u32
//! payload_len  u64       bytes between this field and the trailing CRC
//! payload:
//!   meta_len   u32, followed by UTF-8 JSON metadata
//!   count      u32 tensor entries, each:
//!     name_len u32, name (UTF-8; prefixed "param/", "velocity/" or "buffer/")
//!     dtype    u8 (0 = f32, 1 = f64)
//!     rank     u32, then rank × u32 dims
//!     values   little-endian, row-major
//! crc32        u32 over the payload bytes
//! ```
//! All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchitectureConfig, Model};
use super::optim::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"KSTL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
    pub class_keys: Vec<String>,
    pub arch_hash: String,
    pub arch: ArchitectureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub params: ParamSet<T>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_model(model: &Model<T>, stage: &str, seed: u64, class_keys: Vec<String>) -> Self {
        Self {
            meta: CheckpointMeta {
                stage: stage.to_string(),
                seed,
                class_keys,
                arch_hash: model.arch().hash(),
                arch: model.arch().clone(),
            },
            params: model.params.clone(),
            buffers: model.buffers.clone(),
        }
    }

    /// Rebuilds the model, refusing if the stored architecture differs from
    /// the requested one.
    pub fn to_model(&self, requested: &ArchitectureConfig) -> Result<Model<T>> {
        let requested_hash = requested.hash();
        if self.meta.arch_hash != requested_hash {
            return Err(Error::ArchMismatch {
                checkpoint: self.meta.arch_hash.clone(),
                requested: requested_hash,
            });
        }
        Model::from_parts(self.meta.arch.clone(), self.params.clone(), self.buffers.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        payload.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        payload.extend_from_slice(&meta);
        let count = 2 * self.params.len() + self.buffers.len();
        payload.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            write_tensor(&mut payload, &format!("param/{name}"), &p.value);
            write_tensor(&mut payload, &format!("velocity/{name}"), &p.velocity);
        }
        for (name, t) in &self.buffers {
            write_tensor(&mut payload, &format!("buffer/{name}"), t);
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let payload_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let needed = HEADER_LEN.saturating_add(payload_len).saturating_add(4);
        if bytes.len() < needed {
            return Err(Error::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(Error::MalformedCheckpoint(format!(
                "{} trailing bytes after checksum",
                bytes.len() - needed
            )));
        }
        let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
        let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        parse_payload(payload)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::PRECISION.tag());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedCheckpoint(format!("entry at offset {} overruns the payload", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::MalformedCheckpoint(e.to_string()))
    }
}

fn parse_payload<T: Scalar>(payload: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes: payload, pos: 0 };
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::MalformedCheckpoint(format!("metadata: {e}")))?;
    let count = r.u32()?;
    let mut values = BTreeMap::new();
    let mut velocities = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let tag = r.take(1)?[0];
        let precision =
            Precision::from_tag(tag).ok_or_else(|| Error::MalformedCheckpoint(format!("unknown dtype tag {tag} for {name}")))?;
        if precision != T::PRECISION {
            return Err(Error::MalformedCheckpoint(format!(
                "{name} stored as {precision:?}, requested {:?}",
                T::PRECISION
            )));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let width = precision.byte_width();
        let raw = r.take(n * width)?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        let target = if let Some(rest) = name.strip_prefix("param/") {
            values.insert(rest.to_string(), tensor)
        } else if let Some(rest) = name.strip_prefix("velocity/") {
            velocities.insert(rest.to_string(), tensor)
        } else if let Some(rest) = name.strip_prefix("buffer/") {
            buffers.insert(rest.to_string(), tensor)
        } else {
            return Err(Error::MalformedCheckpoint(format!("unknown tensor kind in {name}")));
        };
        if target.is_some() {
            return Err(Error::MalformedCheckpoint(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != payload.len() {
        return Err(Error::MalformedCheckpoint("unparsed bytes at end of payload".into()));
    }
    let mut params = ParamSet::new();
    for (name, value) in values {
        let velocity = velocities
            .remove(&name)
            .ok_or_else(|| Error::MalformedCheckpoint(format!("missing velocity for {name}")))?;
        params.insert_with_velocity(name, value, velocity)?;
    }
    if let Some(name) = velocities.keys().next() {
        return Err(Error::MalformedCheckpoint(format!("velocity without parameter: {name}")));
    }
    Ok(Checkpoint { meta, params, buffers })
}
