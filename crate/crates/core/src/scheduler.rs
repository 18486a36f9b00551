//! Forward perturbation, timestep sets and the Euler sampler.
//!
//! Time runs from `t = 1` (pure noise) to `t = 0` (clean latent). The
//! generation grid is `t_i = 1 − i/steps`; each Euler step evaluates the
//! velocity at the current (left) time of its interval.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::generator::{BoundGenerator, Condition, GeneratorHandle};
use crate::rng::{substream, tag};
use crate::tensor::{LatentVideo, Tensor};

/// Strictly increasing timesteps in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimestepSet(Vec<f64>);

impl TimestepSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("timestep set is empty"));
        }
        if let Some(&bad) = values.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::OutOfRange {
                what: "timestep",
                value: bad,
            });
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("timesteps must be strictly increasing"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for TimestepSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimestepSet> for Vec<f64> {
    fn from(t: TimestepSet) -> Self {
        t.0
    }
}

impl Default for TimestepSet {
    fn default() -> Self {
        mid_noise_timesteps(4, 0.3, 0.6).expect("valid default range")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
}

impl SamplerConfig {
    /// Generation mode: 16 Euler steps.
    pub const GENERATION_STEPS: usize = 16;
    /// Refinement mode: 4 Euler steps backpropagated through.
    pub const REFINEMENT_STEPS: usize = 4;

    pub fn new(steps: usize, seed: u64) -> Self {
        Self { steps, seed }
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::new(Self::GENERATION_STEPS, 0)
    }
}

fn check_open_unit(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "perturbation time",
            value: t,
        })
    }
}

/// `z_t = (1−t)·x + t·ε`.
pub fn perturb(x: &LatentVideo, eps: &Tensor, t: f64) -> Result<Tensor> {
    check_open_unit(t)?;
    if x.shape() != eps.shape() {
        return Err(Error::shape("perturb", x.shape(), eps.shape()));
    }
    x.scale(1.0 - t).add(&eps.scale(t))
}

/// `v* = ε − x`.
pub fn target_velocity(x: &LatentVideo, eps: &Tensor) -> Result<Tensor> {
    if x.shape() != eps.shape() {
        return Err(Error::shape("target_velocity", x.shape(), eps.shape()));
    }
    eps.sub(x)
}

/// `k` values linearly spaced over `[lo, hi]`, endpoints included; `k = 1`
/// gives the midpoint.
pub fn mid_noise_timesteps(k: usize, lo: f64, hi: f64) -> Result<TimestepSet> {
    if k == 0 {
        return Err(Error::invalid("need at least one timestep"));
    }
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::invalid(alloc::format!(
            "noise range must satisfy 0 < lo <= hi < 1, got [{lo}, {hi}]"
        )));
    }
    if k > 1 && lo == hi {
        return Err(Error::invalid("several timesteps need lo < hi"));
    }
    let values = if k == 1 {
        alloc::vec![0.5 * (lo + hi)]
    } else {
        (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect()
    };
    TimestepSet::new(values)
}

/// Differentiable Euler integration from `t = 1` to `t = 0` starting at `zeta`.
pub fn sample_node(
    g: &mut Graph,
    model: &BoundGenerator<'_>,
    zeta: Var,
    c: &Condition,
    steps: usize,
) -> Result<Var> {
    if steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let dt = 1.0 / steps as f64;
    let mut z = zeta;
    for i in 0..steps {
        let t = 1.0 - i as f64 / steps as f64;
        let v = model.velocity(g, z, t, c)?;
        let step = g.scale(v, -dt);
        z = g.add(z, step)?;
    }
    Ok(z)
}

/// Generate `z₀(ζ; c)`.
pub fn sample(
    model: &GeneratorHandle,
    zeta: &Tensor,
    c: &Condition,
    cfg: &SamplerConfig,
) -> Result<LatentVideo> {
    let dims = model.latent_dims();
    if zeta.shape() != dims.shape() {
        return Err(Error::shape("sample", zeta.shape(), &dims.shape()));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let z = g.constant(zeta.clone());
    let out = sample_node(&mut g, &bound, z, c, cfg.steps)?;
    Ok(g.value(out).clone())
}

/// Standard normal base noise for `cfg.seed`.
pub fn base_noise(model: &GeneratorHandle, seed: u64) -> Tensor {
    Tensor::randn(&model.latent_dims().shape(), &mut substream(seed, &[tag::NOISE]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRow {
    pub steps: usize,
    /// RMS distance between the sampled latent and the exact flow endpoint
    /// `m + s·ζ` of the same noise; bounds the terminal W2 error.
    pub path_rms_error: f64,
    /// |sample mean − m| averaged over entries.
    pub mean_error: f64,
    /// |sample std − s| averaged over entries.
    pub std_error: f64,
}

/// Terminal error of the Euler sampler versus step count, on the analytic law.
pub fn integration_check(
    model: &GeneratorHandle,
    steps_list: &[usize],
    draws: usize,
    seed: u64,
) -> Result<Vec<IntegrationRow>> {
    let analytic = model
        .as_analytic()
        .ok_or(Error::UnsupportedGenerator("integration check needs the analytic generator"))?;
    if steps_list.is_empty() {
        return Err(Error::invalid("steps list is empty"));
    }
    if draws < 2 {
        return Err(Error::invalid("integration check needs at least two draws"));
    }
    let shape = model.latent_dims().shape();
    let mut rng = substream(seed, &[tag::NOISE]);
    let noises: Vec<Tensor> = (0..draws).map(|_| Tensor::randn(&shape, &mut rng)).collect();
    let m = analytic.mean();
    let s = analytic.scale();
    let c = Condition::ClassId(0);
    let mut rows = Vec::with_capacity(steps_list.len());
    for &steps in steps_list {
        let cfg = SamplerConfig::new(steps, seed);
        let mut sq = 0.0;
        let n = m.len();
        let mut sum = alloc::vec![0.0; n];
        let mut sum2 = alloc::vec![0.0; n];
        for zeta in &noises {
            let out = sample(model, zeta, &c, &cfg)?;
            let exact = m.add(&zeta.scale(s))?;
            sq += out.sub(&exact)?.sum_squares();
            for (i, v) in out.data().iter().enumerate() {
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        let d = draws as f64;
        let mut mean_err = 0.0;
        let mut std_err = 0.0;
        for i in 0..n {
            let mu = sum[i] / d;
            let var = (sum2[i] / d - mu * mu).max(0.0) * d / (d - 1.0);
            mean_err += libm::fabs(mu - m.data()[i]);
            std_err += libm::fabs(libm::sqrt(var) - s);
        }
        rows.push(IntegrationRow {
            steps,
            path_rms_error: libm::sqrt(sq / (d * n as f64)),
            mean_error: mean_err / n as f64,
            std_error: std_err / n as f64,
        });
    }
    Ok(rows)
}
