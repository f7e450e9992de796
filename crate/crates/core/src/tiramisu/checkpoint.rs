//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `ECGTIRA\0`, `u32` version, `u32`-prefixed
//! JSON model config, `u32`-prefixed JSON training metadata, `u32` tensor
//! count, then per tensor a `u16`-prefixed name, `u8` rank, `u32` dims and
//! `f32` values; a trailing `u64` FNV-1a hash covers everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainingConfig};
use super::model::{Init, TiramisuModel};
use super::ops::Scalar;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ECGTIRA\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub loss_history: Vec<f64>,
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: TrainingMeta,
    pub tensors: Vec<NamedTensor>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated blob: need {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn json<D: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<D> {
        let n = self.u32()? as usize;
        serde_json::from_slice(self.take(n)?).map_err(|e| Error::Checkpoint(format!("{what} block: {e}")))
    }
}

impl Checkpoint {
    pub fn from_model(model: &TiramisuModel<f32>, meta: TrainingMeta) -> Checkpoint {
        let st = &model.store;
        let tensors = (0..st.len())
            .map(|i| NamedTensor {
                name: st.names[i].clone(),
                shape: st.shapes[i].clone(),
                values: st.values[i].clone(),
            })
            .collect();
        Checkpoint {
            config: model.config.clone(),
            meta,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for block in [serde_json::to_vec(&self.config)?, serde_json::to_vec(&self.meta)?] {
            out.extend_from_slice(&(block.len() as u32).to_le_bytes());
            out.extend_from_slice(&block);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let h = fnv1a64(&out);
        out.extend_from_slice(&h.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic or too short)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "version {version} is not supported (expected {VERSION})"
            )));
        }
        if fnv1a64(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated blob)".into()));
        }
        let config: ModelConfig = r.json("config")?;
        let meta: TrainingMeta = r.json("metadata")?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let values = r
                .take(count * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                body.len() - r.pos
            )));
        }
        Ok(Checkpoint { config, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io("writing checkpoint", &tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io("renaming checkpoint", path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io("reading checkpoint", path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Rebuild the model. With `expected`, the stored configuration must match
    /// it exactly; the error names the first differing field.
    pub fn to_model<T: Scalar>(&self, expected: Option<&ModelConfig>) -> Result<TiramisuModel<T>> {
        if let Some(exp) = expected {
            if let Some(field) = self.config.first_mismatch(exp) {
                return Err(Error::Checkpoint(format!(
                    "config mismatch in field `{field}`: checkpoint {}, expected {}",
                    field_value(&self.config, &field),
                    field_value(exp, &field)
                )));
            }
        }
        let mut model = TiramisuModel::<T>::build(&self.config, Init::Zero)?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                self.tensors.len(),
                model.store.len()
            )));
        }
        for (i, t) in self.tensors.iter().enumerate() {
            if model.store.names[i] != t.name || model.store.shapes[i] != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is `{}` {:?}, architecture expects `{}` {:?}",
                    t.name, t.shape, model.store.names[i], model.store.shapes[i]
                )));
            }
            model.store.values[i] = t.values.iter().map(|&v| T::from_stored(v)).collect();
        }
        Ok(model)
    }
}

fn field_value(cfg: &ModelConfig, field: &str) -> String {
    serde_json::to_value(cfg)
        .ok()
        .and_then(|v| v.get(field).map(ToString::to_string))
        .unwrap_or_default()
}
