//! Bouncing-blob videos, procedural corruptions and the centre-of-mass
//! plausibility metric.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Condition;
use crate::rng::{substream, tag};
use crate::tensor::{LatentDims, LatentVideo, Tensor};

/// Peak intensity of the blob in channel 0.
pub const BLOB_AMPLITUDE: f64 = 2.0;
/// Default blob width in grid cells.
pub const BLOB_SIGMA: f64 = 1.5;
/// Largest per-axis speed drawn by [`sample_dynamics`].
pub const MAX_SPEED: f64 = 1.5;
/// Number of classes used for conditioning; one per velocity-sign quadrant.
pub const NUM_CLASSES: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    BouncingBlob,
}

/// A single blob moving ballistically between reflecting walls.
/// Positions and velocities are `(row, col)` in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    pub blob_sigma: f64,
    pub initial_position: (f64, f64),
    pub velocity: (f64, f64),
    pub dims: LatentDims,
}

impl DynamicsSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.frames == 0 || d.height < 2 || d.width < 2 || d.channels == 0 {
            return Err(Error::invalid("dynamics grid must be at least 1×2×2×1"));
        }
        if !(self.blob_sigma > 0.0 && self.blob_sigma.is_finite()) {
            return Err(Error::OutOfRange {
                what: "blob sigma",
                value: self.blob_sigma,
            });
        }
        let (py, px) = self.initial_position;
        let (vy, vx) = self.velocity;
        for (what, v) in [("position", py), ("position", px), ("velocity", vy), ("velocity", vx)] {
            if !v.is_finite() {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        if !(0.0..=(d.height - 1) as f64).contains(&py) || !(0.0..=(d.width - 1) as f64).contains(&px) {
            return Err(Error::invalid("initial position must lie on the grid"));
        }
        Ok(())
    }

    /// Unfolded (wall-free) position at time `tau`.
    fn unfolded(&self, tau: f64) -> (f64, f64) {
        (
            self.initial_position.0 + self.velocity.0 * tau,
            self.initial_position.1 + self.velocity.1 * tau,
        )
    }

    /// Blob centre at frame `t`.
    pub fn position(&self, t: usize) -> (f64, f64) {
        self.fold(self.unfolded(t as f64))
    }

    fn fold(&self, (y, x): (f64, f64)) -> (f64, f64) {
        (
            reflect(y, (self.dims.height - 1) as f64),
            reflect(x, (self.dims.width - 1) as f64),
        )
    }

    /// Class label: the quadrant of the initial velocity signs.
    pub fn class_id(&self) -> u32 {
        u32::from(self.velocity.0 < 0.0) * 2 + u32::from(self.velocity.1 < 0.0)
    }

    pub fn condition(&self) -> Condition {
        Condition::ClassId(self.class_id())
    }
}

/// Fold `p` into `[0, len]` by mirror reflection at both walls.
pub fn reflect(p: f64, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * len;
    let r = libm::fmod(p, period);
    let q = if r < 0.0 { r + period } else { r };
    if q > len {
        period - q
    } else {
        q
    }
}

fn channel_gain(c: usize) -> f64 {
    1.0 / (1.0 + c as f64)
}

fn render_frame(out: &mut [f64], dims: LatentDims, (py, px): (f64, f64), sigma: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..dims.height {
        let dy = i as f64 - py;
        for j in 0..dims.width {
            let dx = j as f64 - px;
            let v = BLOB_AMPLITUDE * libm::exp(-(dy * dy + dx * dx) * inv);
            let base = (i * dims.width + j) * dims.channels;
            for c in 0..dims.channels {
                out[base + c] = v * channel_gain(c);
            }
        }
    }
}

/// Render the blob at its ballistic position in every frame.
pub fn render_dynamics(spec: &DynamicsSpec) -> Result<LatentVideo> {
    spec.validate()?;
    let d = spec.dims;
    let mut data = vec![0.0; d.len()];
    for (t, frame) in data.chunks_mut(d.frame_len()).enumerate() {
        render_frame(frame, d, spec.position(t), spec.blob_sigma);
    }
    Tensor::from_vec(&d.shape(), data)
}

/// Draw a blob trajectory: sigma [`BLOB_SIGMA`], start at least two cells from
/// each wall, per-axis speed uniform in `±MAX_SPEED`.
pub fn sample_dynamics(dims: LatentDims, seed: u64) -> DynamicsSpec {
    let mut rng = substream(seed, &[tag::DATA]);
    let lo = 2.0_f64;
    let hy = ((dims.height - 1) as f64 - 2.0).max(lo);
    let hx = ((dims.width - 1) as f64 - 2.0).max(lo);
    let py = rng.random_range(lo..=hy);
    let px = rng.random_range(lo..=hx);
    let vy = rng.random_range(-MAX_SPEED..=MAX_SPEED);
    let vx = rng.random_range(-MAX_SPEED..=MAX_SPEED);
    DynamicsSpec {
        kind: DynamicsKind::BouncingBlob,
        blob_sigma: BLOB_SIGMA,
        initial_position: (py, px),
        velocity: (vy, vx),
        dims,
    }
}

/// `count` rendered training videos with their class conditions.
pub fn plausible_dataset(dims: LatentDims, count: usize, seed: u64) -> Result<Vec<(LatentVideo, Condition)>> {
    (0..count)
        .map(|i| {
            let spec = sample_dynamics(dims, crate::rng::substream_seed(seed, &[tag::DATA, i as u64]));
            Ok((render_dynamics(&spec)?, spec.condition()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    Teleport,
    VelocityJump,
    ShapeMorph,
    Freeze,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 4] = [
        CorruptionKind::Teleport,
        CorruptionKind::VelocityJump,
        CorruptionKind::ShapeMorph,
        CorruptionKind::Freeze,
    ];

    /// Teleport 4 cells, velocity ×3, sigma ×2; freeze ignores magnitude.
    pub fn default_magnitude(self) -> f64 {
        match self {
            CorruptionKind::Teleport => 4.0,
            CorruptionKind::VelocityJump => 3.0,
            CorruptionKind::ShapeMorph => 2.0,
            CorruptionKind::Freeze => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Teleport => "teleport",
            CorruptionKind::VelocityJump => "velocity-jump",
            CorruptionKind::ShapeMorph => "shape-morph",
            CorruptionKind::Freeze => "freeze",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub magnitude: f64,
    pub onset_frame: usize,
}

impl CorruptionSpec {
    /// Default magnitude with onset at `T/2`.
    pub fn default_for(kind: CorruptionKind, frames: usize) -> Self {
        Self {
            kind,
            magnitude: kind.default_magnitude(),
            onset_frame: frames / 2,
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.onset_frame < 1 || self.onset_frame >= frames {
            return Err(Error::OutOfRange {
                what: "corruption onset",
                value: self.onset_frame as f64,
            });
        }
        // A zero teleport is the null corruption; rescales must stay positive.
        let ok = match self.kind {
            CorruptionKind::Teleport => self.magnitude >= 0.0,
            _ => self.magnitude > 0.0,
        };
        if !ok || !self.magnitude.is_finite() {
            return Err(Error::OutOfRange {
                what: "corruption magnitude",
                value: self.magnitude,
            });
        }
        Ok(())
    }
}

/// Corrupt the rendering `x` of `spec` from the onset frame on. Frames before
/// the onset are copied from `x` unchanged. `seed` picks the teleport
/// direction.
pub fn corrupt(x: &LatentVideo, spec: &DynamicsSpec, c: &CorruptionSpec, seed: u64) -> Result<LatentVideo> {
    spec.validate()?;
    let d = spec.dims;
    if x.shape() != d.shape() {
        return Err(Error::shape("corrupt", x.shape(), &d.shape()));
    }
    c.validate(d.frames)?;
    let onset = c.onset_frame;
    let fl = d.frame_len();
    let mut data = x.data().to_vec();
    let angle = substream(seed, &[tag::CORRUPT]).random_range(0.0..core::f64::consts::TAU);
    let (dir_y, dir_x) = (libm::sin(angle), libm::cos(angle));
    for t in onset..d.frames {
        let frame = &mut data[t * fl..(t + 1) * fl];
        match c.kind {
            CorruptionKind::Freeze => {
                frame.copy_from_slice(&x.data()[(onset - 1) * fl..onset * fl]);
            }
            CorruptionKind::Teleport => {
                let (y, xx) = spec.unfolded(t as f64);
                let p = spec.fold((y + c.magnitude * dir_y, xx + c.magnitude * dir_x));
                render_frame(frame, d, p, spec.blob_sigma);
            }
            CorruptionKind::VelocityJump => {
                let tau = (onset - 1) as f64 + c.magnitude * (t + 1 - onset) as f64;
                render_frame(frame, d, spec.fold(spec.unfolded(tau)), spec.blob_sigma);
            }
            CorruptionKind::ShapeMorph => {
                render_frame(frame, d, spec.position(t), spec.blob_sigma * c.magnitude);
            }
        }
    }
    Tensor::from_vec(&d.shape(), data)
}

/// Per-frame centre of mass `(row, col)`, weighting each location by the
/// positive part of its channel mean. Frames with no mass map to the grid
/// centre.
pub fn center_of_mass(x: &LatentVideo) -> Result<Vec<(f64, f64)>> {
    let d = LatentDims::of(x)?;
    let data = x.data();
    let mut out = Vec::with_capacity(d.frames);
    for t in 0..d.frames {
        let (mut m, mut sy, mut sx) = (0.0, 0.0, 0.0);
        for i in 0..d.height {
            for j in 0..d.width {
                let base = t * d.frame_len() + (i * d.width + j) * d.channels;
                let mean = data[base..base + d.channels].iter().sum::<f64>() / d.channels as f64;
                let w = mean.max(0.0);
                m += w;
                sy += w * i as f64;
                sx += w * j as f64;
            }
        }
        out.push(if m > 0.0 {
            (sy / m, sx / m)
        } else {
            ((d.height - 1) as f64 / 2.0, (d.width - 1) as f64 / 2.0)
        });
    }
    Ok(out)
}

fn fold_sse(track: &[f64], p: f64, v: f64, len: f64) -> f64 {
    track
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            let e = c - reflect(p + v * t as f64, len);
            e * e
        })
        .sum()
}

/// Least-squares line through `track` (no walls).
fn linear_fit(track: &[f64]) -> (f64, f64) {
    let n = track.len() as f64;
    if track.len() < 2 {
        return (track.first().copied().unwrap_or(0.0), 0.0);
    }
    let tm = (n - 1.0) / 2.0;
    let cm = track.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, &c) in track.iter().enumerate() {
        let dt = t as f64 - tm;
        num += dt * (c - cm);
        den += dt * dt;
    }
    let v = num / den;
    (cm - v * tm, v)
}

/// Minimum sum of squared errors of a reflecting-ballistic fit along one axis.
fn fit_axis(track: &[f64], len: f64) -> f64 {
    let (p0, v0) = linear_fit(track);
    let mut best = (fold_sse(track, p0, v0, len), p0, v0);
    let vmax = 2.0 * MAX_SPEED * 2.0;
    let (nv, np) = (121, 4 * len as usize + 1);
    for iv in 0..nv {
        let v = -vmax + 2.0 * vmax * iv as f64 / (nv - 1) as f64;
        for ip in 0..np {
            let p = len * ip as f64 / (np - 1).max(1) as f64;
            let e = fold_sse(track, p, v, len);
            if e < best.0 {
                best = (e, p, v);
            }
        }
    }
    // Pattern search around the best grid point.
    let (mut sp, mut sv) = (0.25, 2.0 * vmax / (nv - 1) as f64);
    while sp > 1e-10 || sv > 1e-10 {
        let mut moved = false;
        for (dp, dv) in [(sp, 0.0), (-sp, 0.0), (0.0, sv), (0.0, -sv)] {
            let (p, v) = (best.1 + dp, best.2 + dv);
            let e = fold_sse(track, p, v, len);
            if e < best.0 {
                best = (e, p, v);
                moved = true;
            }
        }
        if !moved {
            sp *= 0.5;
            sv *= 0.5;
        }
    }
    best.0
}

/// RMS distance between the per-frame centre of mass and its best-fit
/// reflecting-ballistic trajectory. Lower is more plausible.
pub fn plausibility_metric(x: &LatentVideo) -> Result<f64> {
    let d = LatentDims::of(x)?;
    let com = center_of_mass(x)?;
    let ys: Vec<f64> = com.iter().map(|c| c.0).collect();
    let xs: Vec<f64> = com.iter().map(|c| c.1).collect();
    let sse = fit_axis(&ys, (d.height - 1) as f64) + fit_axis(&xs, (d.width - 1) as f64);
    Ok(libm::sqrt(sse / d.frames as f64))
}
