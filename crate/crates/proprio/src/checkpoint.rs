//! The `PGEN` generator checkpoint.
//!
//! Layout: `"PGEN"`, `u16` version, `u32` descriptor length, a JSON
//! descriptor, then the parameter block as little-endian `f32`. For a tiny-net
//! the block is the flat parameter vector; for the analytic generator it is
//! the mean tensor.

use std::fs;
use std::path::Path;

use proprio_core::generator::{AnalyticGaussian, GeneratorHandle, TinyNet, TinyNetArch};
use proprio_core::{LatentDims, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PGEN";
pub const VERSION: u16 = 1;
const PREFIX_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint at offset {0}")]
    Truncated(usize),
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("parameter block holds {actual} values, descriptor requires {expected}")]
    ParamCount { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum Descriptor {
    TinyNet {
        arch: TinyNetArch,
        #[serde(rename = "paramCount")]
        param_count: usize,
    },
    AnalyticGaussian { dims: LatentDims, scale: f64 },
}

pub fn encode(g: &GeneratorHandle) -> Vec<u8> {
    let (desc, block): (Descriptor, &[f64]) = match g {
        GeneratorHandle::TinyNet(n) => (
            Descriptor::TinyNet {
                arch: n.arch().clone(),
                param_count: n.params().len(),
            },
            n.params().data(),
        ),
        GeneratorHandle::AnalyticGaussian(a) => (
            Descriptor::AnalyticGaussian {
                dims: a.dims(),
                scale: a.scale(),
            },
            a.mean().data(),
        ),
    };
    let json = serde_json::to_vec(&desc).expect("descriptor serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 4 * block.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in block {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<GeneratorHandle, CheckpointError> {
    if bytes.len() < PREFIX_LEN {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let dlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if bytes.len() < PREFIX_LEN + dlen {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let desc: Descriptor = serde_json::from_slice(&bytes[PREFIX_LEN..PREFIX_LEN + dlen])
        .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
    let payload = &bytes[PREFIX_LEN + dlen..];
    if !payload.len().is_multiple_of(4) {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let block: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let descriptor = |e: proprio_core::Error| CheckpointError::Descriptor(e.to_string());
    match desc {
        Descriptor::TinyNet { arch, param_count } => {
            arch.validate().map_err(descriptor)?;
            let expected = arch.param_count();
            if param_count != expected || block.len() != expected {
                return Err(CheckpointError::ParamCount {
                    expected,
                    actual: block.len(),
                });
            }
            let params = Tensor::from_vec(&[expected], block).map_err(descriptor)?;
            Ok(TinyNet::new(arch, params).map_err(descriptor)?.into())
        }
        Descriptor::AnalyticGaussian { dims, scale } => {
            if block.len() != dims.len() {
                return Err(CheckpointError::ParamCount {
                    expected: dims.len(),
                    actual: block.len(),
                });
            }
            let mean = Tensor::from_vec(&dims.shape(), block).map_err(descriptor)?;
            Ok(AnalyticGaussian::new(mean, scale).map_err(descriptor)?.into())
        }
    }
}

pub fn read_checkpoint(path: &Path) -> Result<GeneratorHandle, CheckpointError> {
    decode(&fs::read(path)?)
}

pub fn write_checkpoint(path: &Path, g: &GeneratorHandle) -> Result<(), CheckpointError> {
    fs::write(path, encode(g))?;
    Ok(())
}
