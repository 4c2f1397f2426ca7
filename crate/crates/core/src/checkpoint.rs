//! Single-file checkpoints: versioned header, JSON configuration snapshot, step, and named
//! float32 tensor records.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SGGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form configuration snapshot.
    pub config: serde_json::Value,
    pub step: u64,
    pub records: Vec<Record>,
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

impl Checkpoint {
    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Record> {
        self.record(name).ok_or_else(|| corrupt(format!("missing record {name}")))
    }

    /// Records whose names start with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Record)> + 'a {
        self.records.iter().filter_map(move |r| r.name.strip_prefix(prefix).map(|n| (n, r)))
    }

    pub fn config_as<C: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<C> {
        let v = self.config.get(key).ok_or_else(|| corrupt(format!("config snapshot lacks {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| corrupt(format!("config {key}: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("JSON value serializes");
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(config.len() as u64).to_le_bytes());
        b.extend_from_slice(&config);
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            b.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            b.extend_from_slice(r.name.as_bytes());
            b.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &d in &r.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &r.data {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated file"))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let u64_of = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let config_len = u64_of(take(8)?) as usize;
        let config = serde_json::from_slice(take(config_len)?).map_err(|e| corrupt(format!("config snapshot: {e}")))?;
        let step = u64_of(take(8)?);
        let count = u64_of(take(8)?) as usize;
        let mut records = Vec::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len)?.to_vec()).map_err(|_| corrupt("record name is not UTF-8"))?;
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(u64_of(take(8)?) as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
            let raw = take(numel.checked_mul(4).ok_or_else(|| corrupt("shape overflow"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            records.push(Record { name, shape, data });
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { config, step, records })
    }

    /// Writes atomically through a temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Scalar bookkeeping stored in the configuration snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub adam_g_steps: u64,
    pub adam_d_steps: u64,
    pub omega_mean_updates: u64,
}
