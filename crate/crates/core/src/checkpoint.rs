//! Model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "GDIFFCKP"
//! header_len   u64
//! digest       32 bytes sha256 of header ++ payload
//! header       header_len bytes of UTF-8 JSON
//! payload      f64 arrays, row-major, at the offsets listed in the header
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::backbone::{DenoiserModel, ModelConfig};
use crate::config::{NoiseConfig, TrainConfig};
use crate::ctmc::{NoiseSchedule, NoiseSpecs};
use crate::error::{Error, Result};
use crate::graph::{Alphabet, SizeDistribution};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"GDIFFCKP";
const PREFIX: usize = 8 + 8 + 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    train: TrainConfig,
    model: ModelConfig,
    noise: NoiseConfig,
    alphabet: Alphabet,
    node_marginal: Vec<f64>,
    edge_marginal: Vec<f64>,
    step: u64,
    sizes: SizeDistribution,
    arrays: Vec<ArrayEntry>,
}

/// Everything needed to rebuild a trained denoiser and its noise process.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub alphabet: Alphabet,
    pub node_marginal: Vec<f64>,
    pub edge_marginal: Vec<f64>,
    pub step: u64,
    pub sizes: SizeDistribution,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &DenoiserModel,
        train: TrainConfig,
        noise: NoiseConfig,
        alphabet: Alphabet,
        marginals: (Vec<f64>, Vec<f64>),
        step: u64,
        sizes: SizeDistribution,
    ) -> Self {
        Self {
            train,
            model: *model.config(),
            noise,
            alphabet,
            node_marginal: marginals.0,
            edge_marginal: marginals.1,
            step,
            sizes,
            params: model.names().iter().cloned().zip(model.params().iter().cloned()).collect(),
        }
    }

    pub fn build_model(&self) -> Result<DenoiserModel> {
        DenoiserModel::from_parts(self.model, self.alphabet, self.noise.horizon, self.params.clone())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.noise.schedule()
    }

    pub fn noise_specs(&self) -> Result<NoiseSpecs> {
        NoiseSpecs::from_kind(self.noise.reference, self.alphabet, &self.node_marginal, &self.edge_marginal)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for (name, t) in &self.params {
            arrays.push(ArrayEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            train: self.train,
            model: self.model,
            noise: self.noise,
            alphabet: self.alphabet,
            node_marginal: self.node_marginal.clone(),
            edge_marginal: self.edge_marginal.clone(),
            step: self.step,
            sizes: self.sizes.clone(),
            arrays,
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let mut body = header.clone();
        for (_, t) in &self.params {
            for v in t.data() {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&body);
        let mut out = Vec::with_capacity(PREFIX + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&digest);
        out.extend_from_slice(&body);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREFIX {
            return Err(Error::Checkpoint(format!("truncated file: {} bytes", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[PREFIX..];
        if header_len > body.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: header of {header_len} bytes, {} available",
                body.len()
            )));
        }
        if Sha256::digest(body).as_slice() != &bytes[16..48] {
            return Err(Error::Checkpoint("checksum mismatch: file is corrupted".into()));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                header.format_version
            )));
        }
        let payload = &body[header_len..];
        if !payload.len().is_multiple_of(8) {
            return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut params = Vec::with_capacity(header.arrays.len());
        for a in &header.arrays {
            let len: usize = a.shape.iter().product();
            let data = values
                .get(a.offset..a.offset + len)
                .ok_or_else(|| Error::Checkpoint(format!("array {} runs past the payload", a.name)))?;
            let t = Tensor::new(a.shape.clone(), data.to_vec())
                .map_err(|e| Error::Checkpoint(format!("array {}: {e}", a.name)))?;
            params.push((a.name.clone(), t));
        }
        Ok(Self {
            train: header.train,
            model: header.model,
            noise: header.noise,
            alphabet: header.alphabet,
            node_marginal: header.node_marginal,
            edge_marginal: header.edge_marginal,
            step: header.step,
            sizes: header.sizes,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Hex sha256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(crate::iso::hex(&Sha256::digest(&bytes)))
}
