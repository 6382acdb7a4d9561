//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSDT" | u32 version | u64 header_len | header (UTF-8 JSON)
//!        | f32 payload per tensor, directory order | u32 CRC32 of all prior bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingMeta;
use crate::error::{Error, Result};
use crate::model::{DetectorModel, ModelConfig};
use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::NormalizationStats;

pub const MAGIC: &[u8; 4] = b"FSDT";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 4 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: DetectorModel,
    pub params: ParamStore<f32>,
    /// Training-set statistics, present under the fitted scope.
    pub fitted_stats: Option<NormalizationStats>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    fitted_stats: Option<NormalizationStats>,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.model.cfg.clone(),
            fitted_stats: self.fitted_stats.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    frozen: p.frozen,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * self.params.num_elements() + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.params.iter() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE + 4 {
            return Err(Error::Format(format!("file is {} bytes, too short for a checkpoint", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&end| end + 4 <= bytes.len())
            .ok_or_else(|| Error::Format(format!("header length {header_len} exceeds file size")))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Format(format!("unreadable header: {e}")))?;
        let elements: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let expected = header_end + 4 * elements + 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} bytes for the declared tensors, found {}",
                bytes.len()
            )));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut params = ParamStore::<f32>::new();
        let model = DetectorModel::build(&header.config, 0, &mut params)
            .map_err(|e| Error::Format(format!("invalid architecture: {e}")))?;
        if params.len() != header.tensors.len() {
            return Err(Error::Format(format!(
                "architecture has {} tensors, file has {}",
                params.len(),
                header.tensors.len()
            )));
        }
        let mut offset = header_end;
        for (entry, p) in header.tensors.iter().zip(params.iter_mut()) {
            if entry.name != p.name || entry.shape != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            let n = p.value.numel();
            let data = bytes[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += 4 * n;
            p.value = Tensor::new(entry.shape.clone(), data)?;
            p.frozen = entry.frozen;
        }
        Ok(Self {
            model,
            params,
            fitted_stats: header.fitted_stats,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&fs::read(path)?)
}
