//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HLSDBG1\0"                 magic, 8 bytes
//! u64                          header length in bytes
//! header                       UTF-8 JSON: {"metadata": .., "tensors": [{name, dtype, shape, offset}]}
//! payload                      tensor data, offsets relative to payload start
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{numel, DType, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HLSDBG1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: Value,
    tensors: Vec<TensorHeader>,
}

/// In-memory view of a checkpoint file.
#[derive(Debug, Clone)]
pub struct Container {
    pub metadata: Value,
    headers: Vec<TensorHeader>,
    payload: Vec<u8>,
}

impl Container {
    pub fn new(metadata: Value) -> Self {
        Container {
            metadata,
            headers: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, tensor: &Tensor<T>) {
        self.push_raw(name, tensor.shape(), tensor.data());
    }

    pub fn push_raw<T: Real>(&mut self, name: impl Into<String>, shape: &[usize], data: &[T]) {
        let offset = self.payload.len() as u64;
        for &x in data {
            x.write_le(&mut self.payload);
        }
        self.headers.push(TensorHeader {
            name: name.into(),
            dtype: T::DTYPE,
            shape: shape.to_vec(),
            offset,
        });
    }

    pub fn headers(&self) -> &[TensorHeader] {
        &self.headers
    }

    pub fn contains(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h.name == name)
    }

    /// Reads a tensor, converting from the stored dtype if needed.
    pub fn tensor<T: Real>(&self, name: &str) -> Result<Tensor<T>> {
        let h = self
            .headers
            .iter()
            .find(|h| h.name == name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))?;
        let n = numel(&h.shape);
        let size = h.dtype.size_of();
        let start = h.offset as usize;
        let end = start + n * size;
        let bytes = self
            .payload
            .get(start..end)
            .ok_or_else(|| Error::Data(format!("tensor `{name}` runs past the payload")))?;
        let data = match h.dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| T::from_f64_lossy(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::read_le(c)))
                .collect(),
        };
        Tensor::new(h.shape.clone(), data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            metadata: self.metadata.clone(),
            tensors: self.headers.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Data(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Data("not an HLSDBG1 checkpoint (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + len)
            .ok_or_else(|| Error::Data("checkpoint header truncated".into()))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let payload = bytes[16 + len..].to_vec();
        for h in &header.tensors {
            let end = h.offset as usize + numel(&h.shape) * h.dtype.size_of();
            if end > payload.len() {
                return Err(Error::Data(format!("tensor `{}` runs past the payload", h.name)));
            }
        }
        Ok(Container {
            metadata: header.metadata,
            headers: header.tensors,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
