//! Weight archives: `FSAL1`, a little-endian `u64` header length, a JSON
//! header listing every tensor, then the raw little-endian `f32` payload.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use fastsal_core::net::{Model, ModelConfig, ParamStore};
use fastsal_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FSAL1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    #[serde(default = "yes")]
    pub trainable: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    config: Option<ModelConfig>,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus the configuration of the model they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightArchive {
    pub config: Option<ModelConfig>,
    pub params: ParamStore<f32>,
}

impl WeightArchive {
    pub fn from_model(model: &Model<f32>) -> Self {
        Self {
            config: Some(model.config.clone()),
            params: model.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for p in self.params.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
                trainable: p.trainable,
            });
            offset += 4 * p.value.numel() as u64;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(13 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |d: String| Error::format(path, d);
        if bytes.len() < 13 || &bytes[..5] != MAGIC {
            return Err(bad("not a weight archive (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
        let header_end = 13usize.checked_add(len).filter(|&e| e <= bytes.len());
        let Some(header_end) = header_end else {
            return Err(bad(format!("header of {len} bytes runs past the end of the file")));
        };
        let header: Header = serde_json::from_slice(&bytes[13..header_end]).map_err(|e| bad(e.to_string()))?;
        let payload = &bytes[header_end..];
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let start = t.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(bad(format!(
                    "truncated payload: {} needs bytes {start}..{end}, payload has {}",
                    t.name,
                    payload.len()
                )));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            params.insert(&t.name, Tensor::new(&t.shape, data)?, t.trainable)?;
        }
        Ok(Self {
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Differences against the tensors a model expects; empty when the
    /// archive fits.
    pub fn diff(&self, expected: &ParamStore<f32>) -> Vec<String> {
        let have: BTreeSet<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        let want: BTreeSet<&str> = expected.iter().map(|p| p.name.as_str()).collect();
        let mut out = Vec::new();
        for name in want.difference(&have) {
            out.push(format!("missing {name}"));
        }
        for name in have.difference(&want) {
            out.push(format!("unexpected {name}"));
        }
        for p in expected.iter() {
            if let Ok(a) = self.params.get(&p.name) {
                if a.shape() != p.value.shape() {
                    out.push(format!("{}: archive {:?}, model {:?}", p.name, a.shape(), p.value.shape()));
                }
            }
        }
        out
    }

    /// Builds the model described by `config` (or the archive's own
    /// configuration) and loads every tensor into it.
    pub fn into_model(self, config: Option<&ModelConfig>) -> Result<Model<f32>> {
        let config = match (config, &self.config) {
            (Some(c), _) => c.clone(),
            (None, Some(c)) => c.clone(),
            (None, None) => {
                return Err(Error::Usage(
                    "the weight archive carries no model configuration; pass --config".into(),
                ))
            }
        };
        let mut model = Model::<f32>::build(&config, 0)?;
        let diff = self.diff(&model.params);
        if !diff.is_empty() {
            return Err(fastsal_core::Error::Weights(format!(
                "{} difference(s) between archive and model: {}",
                diff.len(),
                diff.join("; ")
            ))
            .into());
        }
        for p in model.params.iter_mut() {
            p.value = self.params.get(&p.name)?.clone();
        }
        Ok(model)
    }
}
