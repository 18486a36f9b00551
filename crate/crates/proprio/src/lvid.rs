//! The `LVID` latent-video container.
//!
//! Layout: `"LVID"`, `u16` version, `u32` header length, a JSON header
//! `{"C","H","T","W","dtype":"f32","layout":"THWC"}`, then `T·H·W·C`
//! little-endian `f32` values. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use proprio_core::{LatentDims, LatentVideo, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"LVID";
pub const VERSION: u16 = 1;
const PREFIX_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum LvidError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {version} at offset {offset}")]
    UnsupportedVersion { offset: usize, version: u16 },
    #[error("truncated container at offset {offset}: need {needed} bytes, have {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid header at offset {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("payload length mismatch at offset {offset}: header implies {expected} bytes, found {actual}")]
    LengthMismatch {
        offset: usize,
        expected: usize,
        actual: usize,
    },
}

impl LvidError {
    /// Byte offset the error refers to, when there is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            LvidError::Io(_) => None,
            LvidError::BadMagic { offset }
            | LvidError::UnsupportedVersion { offset, .. }
            | LvidError::Truncated { offset, .. }
            | LvidError::Header { offset, .. }
            | LvidError::LengthMismatch { offset, .. } => Some(*offset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    #[serde(rename = "C")]
    c: usize,
    dtype: String,
    layout: String,
}

/// Serialize `x` (narrowed to `f32`).
pub fn encode(x: &LatentVideo) -> Result<Vec<u8>, LvidError> {
    let d = LatentDims::of(x).map_err(|e| LvidError::Header {
        offset: PREFIX_LEN,
        message: e.to_string(),
    })?;
    let header = Header {
        t: d.frames,
        h: d.height,
        w: d.width,
        c: d.channels,
        dtype: "f32".into(),
        layout: "THWC".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX_LEN + json.len() + 4 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in x.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn need(bytes: &[u8], offset: usize, n: usize) -> Result<(), LvidError> {
    if bytes.len() < offset + n {
        return Err(LvidError::Truncated {
            offset,
            needed: n,
            available: bytes.len().saturating_sub(offset),
        });
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<LatentVideo, LvidError> {
    need(bytes, 0, 4)?;
    if &bytes[..4] != MAGIC {
        return Err(LvidError::BadMagic { offset: 0 });
    }
    need(bytes, 4, 2)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(LvidError::UnsupportedVersion { offset: 4, version });
    }
    need(bytes, 6, 4)?;
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    need(bytes, PREFIX_LEN, hlen)?;
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..PREFIX_LEN + hlen]).map_err(|e| LvidError::Header {
        offset: PREFIX_LEN,
        message: e.to_string(),
    })?;
    if header.dtype != "f32" || header.layout != "THWC" {
        return Err(LvidError::Header {
            offset: PREFIX_LEN,
            message: format!("unsupported dtype/layout {}/{}", header.dtype, header.layout),
        });
    }
    let start = PREFIX_LEN + hlen;
    let count = header
        .t
        .checked_mul(header.h)
        .and_then(|n| n.checked_mul(header.w))
        .and_then(|n| n.checked_mul(header.c))
        .filter(|&n| n > 0)
        .ok_or_else(|| LvidError::Header {
            offset: PREFIX_LEN,
            message: "dimensions must be positive".into(),
        })?;
    let expected = count.checked_mul(4).ok_or_else(|| LvidError::Header {
        offset: PREFIX_LEN,
        message: "dimensions overflow".into(),
    })?;
    let actual = bytes.len() - start;
    if actual != expected {
        return Err(LvidError::LengthMismatch {
            offset: start,
            expected,
            actual,
        });
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::from_vec(&[header.t, header.h, header.w, header.c], data).map_err(|e| LvidError::Header {
        offset: PREFIX_LEN,
        message: e.to_string(),
    })
}

pub fn read_lvid(path: &Path) -> Result<LatentVideo, LvidError> {
    decode(&fs::read(path)?)
}

pub fn write_lvid(path: &Path, x: &LatentVideo) -> Result<(), LvidError> {
    let bytes = encode(x)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_layout() {
        let x = Tensor::full(&[1, 1, 1, 2], 1.5);
        let b = encode(&x).unwrap();
        assert_eq!(&b[..4], b"LVID");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        let hlen = u32::from_le_bytes(b[6..10].try_into().unwrap()) as usize;
        assert_eq!(b.len(), 10 + hlen + 8);
        assert_eq!(&b[10 + hlen..10 + hlen + 4], &1.5f32.to_le_bytes());
    }

    #[test]
    fn truncated_prefix() {
        assert!(matches!(decode(b"LV"), Err(LvidError::Truncated { offset: 0, .. })));
    }

    #[test]
    fn rejects_rank_other_than_four() {
        assert!(encode(&Tensor::zeros(&[2, 2])).is_err());
    }
}
