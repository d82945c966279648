//! Versioned binary container for model weights and indexes.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DEMORANK"
//! version  u32      1
//! meta_len u64
//! meta     meta_len bytes of UTF-8 JSON
//! payload  f32 values, tensors back to back in manifest order
//! ```
//!
//! The JSON metadata carries the model kind, free-form model metadata and a
//! tensor manifest (`name`, `shape`, `offset` in f32 elements).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"DEMORANK";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this reader understands {VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("expected a {expected} checkpoint, found {found}")]
    WrongKind { expected: String, found: String },
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }

    /// Narrows f64 parameters; exact for values already on the f32 grid.
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, data: &[f64]) -> Self {
        Self::new(name, shape, data.iter().map(|&x| x as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| x as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

impl Container {
    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind.into(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.into()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(CheckpointError::Shape(format!(
                    "tensor {} has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            entries.push(ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len();
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let meta = serde_json::to_vec(&header).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CheckpointError::Truncated("header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let payload_start = HEADER_LEN
            .checked_add(meta_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| CheckpointError::Truncated("metadata".into()))?;
        let header: Header = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let payload = &bytes[payload_start..];
        if !payload.len().is_multiple_of(4) {
            return Err(CheckpointError::Truncated("payload is not a whole number of f32 values".into()));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(CheckpointError::Shape(format!(
                    "tensor {} at offset {} but previous tensors end at {expected_offset}",
                    e.name, e.offset
                )));
            }
            let end = e.offset + len;
            if end > values.len() {
                return Err(CheckpointError::Truncated(format!("tensor {}", e.name)));
            }
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                data: values[e.offset..end].to_vec(),
            });
            expected_offset = end;
        }
        if expected_offset != values.len() {
            return Err(CheckpointError::Shape(format!(
                "payload has {} values, manifest describes {expected_offset}",
                values.len()
            )));
        }
        Ok(Container {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }
}

/// Rounds to the nearest f32 so that parameters survive the f32 payload.
pub fn to_f32_grid(x: f64) -> f64 {
    x as f32 as f64
}
