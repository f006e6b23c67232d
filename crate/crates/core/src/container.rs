//! Versioned binary container for numeric artifacts.
//!
//! Layout: the 8-byte magic `CGFAMBIN`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! tensor as row-major little-endian `f64` in manifest order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"CGFAMBIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("not a container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("truncated container")]
    Truncated,
    #[error("container is of kind `{found}`, expected `{expected}`")]
    WrongKind { expected: String, found: String },
    #[error("tensor `{0}` missing from manifest")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("data length {found} does not match manifest total {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A decoded container: header plus named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    tensors: BTreeMap<String, Matrix>,
}

impl Container {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            header: Header {
                kind: kind.to_string(),
                meta,
                tensors: Vec::new(),
            },
            tensors: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, name: &str, m: &Matrix) {
        self.header.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: (m.rows, m.cols),
        });
        self.tensors.insert(name.to_string(), m.clone());
    }

    pub fn push_vec(&mut self, name: &str, v: &[f64]) {
        self.push(
            name,
            &Matrix {
                rows: 1,
                cols: v.len(),
                data: v.to_vec(),
            },
        );
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for entry in &self.header.tensors {
            for v in &self.tensors[&entry.name].data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 20 {
            return Err(ContainerError::Truncated);
        }
        if &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ContainerError::Version(version));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + header_len)
            .ok_or(ContainerError::Truncated)?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[20 + header_len..];
        let expected: usize = header.tensors.iter().map(|t| t.shape.0 * t.shape.1).sum();
        if data.len() != expected * 8 {
            return Err(ContainerError::LengthMismatch {
                expected,
                found: data.len() / 8,
            });
        }
        let mut tensors = BTreeMap::new();
        let mut offset = 0;
        for entry in &header.tensors {
            let n = entry.shape.0 * entry.shape.1;
            let values = data[offset * 8..(offset + n) * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += n;
            tensors.insert(
                entry.name.clone(),
                Matrix {
                    rows: entry.shape.0,
                    cols: entry.shape.1,
                    data: values,
                },
            );
        }
        Ok(Self { header, tensors })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), ContainerError> {
        if self.header.kind == kind {
            Ok(())
        } else {
            Err(ContainerError::WrongKind {
                expected: kind.to_string(),
                found: self.header.kind.clone(),
            })
        }
    }

    /// Fetches a tensor and checks its shape.
    pub fn take(&self, name: &str, shape: (usize, usize)) -> Result<Matrix, ContainerError> {
        let m = self
            .tensors
            .get(name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_string()))?;
        if (m.rows, m.cols) != shape {
            return Err(ContainerError::ShapeMismatch {
                name: name.to_string(),
                expected: shape,
                found: (m.rows, m.cols),
            });
        }
        Ok(m.clone())
    }

    pub fn take_vec(&self, name: &str, len: usize) -> Result<Vec<f64>, ContainerError> {
        Ok(self.take(name, (1, len))?.data)
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }
}
