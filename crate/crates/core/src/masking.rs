//! Motion masks from temporal differences of the latent video.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{LatentDims, LatentVideo, Tensor};

/// Spatiotemporal weights `M ∈ [0,1]^{T×H×W}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMask {
    values: Tensor,
}

impl MotionMask {
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn ones(dims: LatentDims) -> Self {
        Self {
            values: Tensor::ones(&[dims.frames, dims.height, dims.width]),
        }
    }

    pub fn from_values(values: Tensor) -> Result<Self> {
        if values.rank() != 3 {
            return Err(crate::error::Error::invalid("mask must be [T,H,W]"));
        }
        if let Some(&bad) = values.data().iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(crate::error::Error::OutOfRange {
                what: "mask entry",
                value: bad,
            });
        }
        Ok(Self { values })
    }

    /// The mask as a `[T,H,W,1]` latent for export.
    pub fn as_latent(&self) -> LatentVideo {
        let s = self.values.shape();
        self.values
            .reshape(&[s[0], s[1], s[2], 1])
            .expect("same element count")
    }
}

/// Channel-mean absolute frame difference, first map copied from the second,
/// then global min–max normalization. Constant volumes give the all-ones mask.
pub fn motion_mask(x: &LatentVideo) -> Result<MotionMask> {
    let d = LatentDims::of(x)?;
    let per_frame = d.height * d.width;
    let mut maps = vec![0.0; d.frames * per_frame];
    let data = x.data();
    for t in 1..d.frames {
        for u in 0..per_frame {
            let cur = (t * per_frame + u) * d.channels;
            let prev = ((t - 1) * per_frame + u) * d.channels;
            let diff: f64 = (0..d.channels)
                .map(|c| libm::fabs(data[cur + c] - data[prev + c]))
                .sum();
            maps[t * per_frame + u] = diff / d.channels as f64;
        }
    }
    if d.frames > 1 {
        let (first, rest) = maps.split_at_mut(per_frame);
        first.copy_from_slice(&rest[..per_frame]);
    }
    let (lo, hi) = maps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let values: Vec<f64> = if hi > lo {
        let span = hi - lo;
        maps.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![1.0; maps.len()]
    };
    Ok(MotionMask {
        values: Tensor::from_vec(&[d.frames, d.height, d.width], values)?,
    })
}
