//! Flat parameter container.
//!
//! Layout: an 8-byte little-endian header length `n`, `n` bytes of JSON header,
//! then the raw little-endian tensor payload. The header maps each tensor name to
//! its dtype, shape and byte offset into the payload, and carries free-form
//! metadata under `"metadata"`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    tensors: BTreeMap<String, TensorEntry>,
    metadata: serde_json::Value,
}

/// Named tensors plus metadata, as stored on disk.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            tensors: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = BTreeMap::new();
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: T::DTYPE.to_string(),
                    shape: t.shape().to_vec(),
                    offset: payload.len(),
                },
            );
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + payload.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Decode, converting stored values to `T` if the dtype differs.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let header_end = 8usize.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[8..header_end])?;
        let payload = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            let count: usize = e.shape.iter().product();
            let data: Vec<T> = match e.dtype.as_str() {
                "f32" => read_values::<f32>(payload, e.offset, count)?
                    .into_iter()
                    .map(|v| T::lit(v as f64))
                    .collect(),
                "f64" => read_values::<f64>(payload, e.offset, count)?
                    .into_iter()
                    .map(T::lit)
                    .collect(),
                other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
            };
            tensors.insert(name, Tensor::new(&e.shape, data)?);
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn read_values<U: Real>(payload: &[u8], offset: usize, count: usize) -> Result<Vec<U>> {
    let end = offset + count * U::BYTES;
    if end > payload.len() {
        return Err(Error::Checkpoint("tensor extends past payload".into()));
    }
    Ok(payload[offset..end]
        .chunks_exact(U::BYTES)
        .map(U::read_le)
        .collect())
}
