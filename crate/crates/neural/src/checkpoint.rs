//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `STMKCKP1`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor as little-endian `f32` values in
//! header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::layers::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STMKCKP1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<TensorInfo>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub info: TensorInfo,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (model configuration, optimizer scalars, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let mut ck = Self::new(meta);
        for e in store.entries() {
            ck.push(&e.name, e.tensor.clone(), e.trainable);
        }
        ck
    }

    pub fn push(&mut self, name: &str, tensor: Tensor, trainable: bool) {
        self.tensors.push(NamedTensor {
            info: TensorInfo {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                trainable,
            },
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.info.name == name).map(|t| &t.tensor)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|t| (t.info.name.as_str(), &t.tensor))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: FORMAT_VERSION,
            tensors: self.tensors.iter().map(|t| t.info.clone()).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let floats: usize = self.tensors.iter().map(|t| t.tensor.numel()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for &v in t.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {}", header.version)));
        }
        let mut off = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            let raw = bytes
                .get(off..off + 4 * n)
                .ok_or_else(|| NeuralError::Checkpoint(format!("truncated data for {}", info.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            off += 4 * n;
            let tensor = Tensor::new(&info.shape, data)?;
            tensors.push(NamedTensor { info, tensor });
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    /// Writes through a temporary file in the same directory, then renames.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_for_f32_values() {
        let mut ck = Checkpoint::new(serde_json::json!({"hello": [1, 2]}));
        ck.push("a", Tensor::new(&[2, 3], vec![0.5, -1.25, 3.0, 1e-3f32 as f64, 0.0, 7.0]).unwrap(), true);
        ck.push("b", Tensor::filled(&[4], 0.1f32 as f64), false);
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut ck = Checkpoint::new(serde_json::Value::Null);
        ck.push("a", Tensor::filled(&[3], 1.0), true);
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }
}
