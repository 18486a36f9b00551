//! Self-scoring from flow residuals.
//!
//! For a latent `x`, timestep `t` and noise `ε`, the residual is
//! `r = v̂((1−t)x + tε, t, c) − (ε − x)`. Its squared magnitude `ℓ_t` (global)
//! and mask-weighted per-location mean `ℓ_t^motion` are averaged over `N`
//! perturbations per timestep (`μ_k`, with population variance `v_k`), then
//! combined across timesteps with weights `w_k = 1/(v_k + ε)` normalized to
//! sum to one. The hybrid score is `λ·S_global + (1−λ)·S_motion`.
//!
//! The non-differentiable [`score`] and the graph-building
//! [`score_differentiable`] share the residual graph and mirror the
//! aggregation arithmetic operation for operation, so their values agree
//! bitwise on matched noise draws.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Reduction, Var};
use crate::error::{Error, Result};
use crate::generator::{BoundGenerator, Condition, GeneratorHandle};
use crate::masking::{motion_mask, MotionMask};
use crate::rng::{substream, substream_seed, tag};
use crate::scheduler::TimestepSet;
use crate::tensor::{LatentDims, LatentVideo, Tensor};

/// How `‖r‖²` is reduced over latent entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossReduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreVariant {
    Global,
    Motion,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ScoreConfig {
    pub timesteps: TimestepSet,
    pub num_perturbations: usize,
    pub variance_weighting: bool,
    pub epsilon_stability: f64,
    pub mask_delta: f64,
    pub lambda: f64,
    pub reduction: LossReduction,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            timesteps: TimestepSet::default(),
            num_perturbations: 4,
            variance_weighting: true,
            epsilon_stability: 1e-8,
            mask_delta: 1e-6,
            lambda: 0.2,
            reduction: LossReduction::Mean,
        }
    }
}

impl ScoreConfig {
    /// Defaults for few-step (distilled-style) samplers: uniform timestep weights.
    pub fn few_step() -> Self {
        Self {
            variance_weighting: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_perturbations == 0 {
            return Err(Error::invalid("num_perturbations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::OutOfRange {
                what: "lambda",
                value: self.lambda,
            });
        }
        if self.epsilon_stability.is_nan() || self.epsilon_stability <= 0.0 {
            return Err(Error::OutOfRange {
                what: "epsilon_stability",
                value: self.epsilon_stability,
            });
        }
        if self.mask_delta.is_nan() || self.mask_delta <= 0.0 {
            return Err(Error::OutOfRange {
                what: "mask_delta",
                value: self.mask_delta,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResidualRecord {
    pub t: f64,
    pub eps_seed: u64,
    pub loss: f64,
    pub masked_loss: f64,
    pub residual_norm_per_location: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TimestepEstimate {
    pub t: f64,
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
    pub normalized_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTimestep {
    pub global: Vec<TimestepEstimate>,
    pub motion: Vec<TimestepEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreBreakdown {
    pub per_timestep: PerTimestep,
    pub s_global: f64,
    pub s_motion: f64,
    pub s_hybrid: f64,
}

impl ScoreBreakdown {
    pub fn get(&self, variant: ScoreVariant) -> f64 {
        match variant {
            ScoreVariant::Global => self.s_global,
            ScoreVariant::Motion => self.s_motion,
            ScoreVariant::Hybrid => self.s_hybrid,
        }
    }
}

/// Pre-drawn perturbation noise: `draws[k][n]` for timestep `k`, draw `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDraws {
    seeds: Vec<Vec<u64>>,
    draws: Vec<Vec<Tensor>>,
}

impl PerturbationDraws {
    /// Each draw has its own substream keyed by `(seed, k, n)`.
    pub fn new(dims: LatentDims, cfg: &ScoreConfig, seed: u64) -> Self {
        let shape = dims.shape();
        let mut seeds = Vec::with_capacity(cfg.timesteps.len());
        let mut draws = Vec::with_capacity(cfg.timesteps.len());
        for k in 0..cfg.timesteps.len() {
            let row_seeds: Vec<u64> = (0..cfg.num_perturbations)
                .map(|n| substream_seed(seed, &[tag::PERTURB, k as u64, n as u64]))
                .collect();
            let row = row_seeds
                .iter()
                .map(|&s| Tensor::randn(&shape, &mut substream(s, &[])))
                .collect();
            seeds.push(row_seeds);
            draws.push(row);
        }
        Self { seeds, draws }
    }

    pub fn get(&self, k: usize, n: usize) -> &Tensor {
        &self.draws[k][n]
    }

    pub fn seed(&self, k: usize, n: usize) -> u64 {
        self.seeds[k][n]
    }

    fn check(&self, cfg: &ScoreConfig) -> Result<()> {
        if self.draws.len() != cfg.timesteps.len()
            || self.draws.iter().any(|r| r.len() != cfg.num_perturbations)
        {
            return Err(Error::invalid("perturbation draws do not match the score config"));
        }
        Ok(())
    }
}

struct ResidualNodes {
    loss: Var,
    masked: Var,
    per_location: Var,
}

#[allow(clippy::too_many_arguments)]
fn residual_nodes(
    g: &mut Graph,
    model: &BoundGenerator<'_>,
    x: Var,
    eps: &Tensor,
    t: f64,
    c: &Condition,
    mask: &Tensor,
    cfg: &ScoreConfig,
) -> Result<ResidualNodes> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::OutOfRange {
            what: "scoring timestep",
            value: t,
        });
    }
    if g.value(x).shape() != eps.shape() {
        return Err(Error::shape("residual", g.value(x).shape(), eps.shape()));
    }
    let xs = g.scale(x, 1.0 - t);
    let zt = g.add_const(xs, &eps.scale(t))?;
    let v = model.velocity(g, zt, t, c)?;
    let e = g.constant(eps.clone());
    let target = g.sub(e, x)?;
    let r = g.sub(v, target)?;
    let sq = g.square(r);
    let loss = match cfg.reduction {
        LossReduction::Mean => g.mean(sq),
        LossReduction::Sum => g.sum(sq),
    };
    let per_location = g.reduce(sq, Reduction::Sum, Some(&[3]))?;
    let masked = g.masked_mean(per_location, mask, cfg.mask_delta)?;
    Ok(ResidualNodes {
        loss,
        masked,
        per_location,
    })
}

fn mask_tensor(mask: Option<&MotionMask>, dims: LatentDims) -> Tensor {
    match mask {
        Some(m) => m.values().clone(),
        None => MotionMask::ones(dims).values().clone(),
    }
}

/// One residual evaluation. Without a mask the all-ones mask is used.
#[allow(clippy::too_many_arguments)]
pub fn residual_loss(
    model: &GeneratorHandle,
    x: &LatentVideo,
    eps: &Tensor,
    t: f64,
    c: &Condition,
    cfg: &ScoreConfig,
    mask: Option<&MotionMask>,
    eps_seed: u64,
) -> Result<ResidualRecord> {
    let dims = model.latent_dims();
    if x.shape() != dims.shape() {
        return Err(Error::shape("residual_loss", x.shape(), &dims.shape()));
    }
    let m = mask_tensor(mask, dims);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.constant(x.clone());
    let nodes = residual_nodes(&mut g, &bound, xv, eps, t, c, &m, cfg)?;
    Ok(ResidualRecord {
        t,
        eps_seed,
        loss: scalar(&g, nodes.loss),
        masked_loss: scalar(&g, nodes.masked),
        residual_norm_per_location: Some(g.value(nodes.per_location).clone()),
    })
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).item().expect("scalar node")
}

/// Mean and population variance, accumulated left to right.
fn mean_variance(losses: &[f64]) -> (f64, f64) {
    let inv = 1.0 / losses.len() as f64;
    let sum = losses[1..].iter().fold(losses[0], |acc, &l| acc + l);
    let mean = sum * inv;
    let sq = |l: f64| {
        let d = l - mean;
        d * d
    };
    let ss = losses[1..].iter().fold(sq(losses[0]), |acc, &l| acc + sq(l));
    (mean, ss * inv)
}

fn estimate_from_losses(t: f64, losses: &[f64], cfg: &ScoreConfig) -> TimestepEstimate {
    let (mean, variance) = mean_variance(losses);
    TimestepEstimate {
        t,
        mean,
        variance,
        weight: 1.0 / (variance + cfg.epsilon_stability),
        normalized_weight: 1.0,
    }
}

/// Draw `N` perturbations at `t` and estimate `(global, motion)` statistics.
/// The returned weights are unnormalized; [`aggregate`] normalizes them.
#[allow(clippy::too_many_arguments)]
pub fn estimate_timestep(
    model: &GeneratorHandle,
    x: &LatentVideo,
    t: f64,
    c: &Condition,
    cfg: &ScoreConfig,
    mask: Option<&MotionMask>,
    seed: u64,
) -> Result<(TimestepEstimate, TimestepEstimate)> {
    cfg.validate()?;
    let dims = model.latent_dims();
    let m = mask_tensor(mask, dims);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.constant(x.clone());
    let mut global = Vec::with_capacity(cfg.num_perturbations);
    let mut motion = Vec::with_capacity(cfg.num_perturbations);
    for n in 0..cfg.num_perturbations {
        let s = substream_seed(seed, &[tag::PERTURB, n as u64]);
        let eps = Tensor::randn(&dims.shape(), &mut substream(s, &[]));
        let nodes = residual_nodes(&mut g, &bound, xv, &eps, t, c, &m, cfg)?;
        global.push(scalar(&g, nodes.loss));
        motion.push(scalar(&g, nodes.masked));
    }
    Ok((
        estimate_from_losses(t, &global, cfg),
        estimate_from_losses(t, &motion, cfg),
    ))
}

/// Normalize timestep weights and combine means into `S`.
pub fn aggregate(
    estimates: &[TimestepEstimate],
    cfg: &ScoreConfig,
) -> Result<(Vec<TimestepEstimate>, f64)> {
    if estimates.is_empty() {
        return Err(Error::invalid("no timestep estimates to aggregate"));
    }
    let mut out = estimates.to_vec();
    if cfg.variance_weighting {
        for e in &mut out {
            e.weight = 1.0 / (e.variance + cfg.epsilon_stability);
        }
        let total = out[1..].iter().fold(out[0].weight, |acc, e| acc + e.weight);
        for e in &mut out {
            e.normalized_weight = e.weight / total;
        }
    } else {
        let uniform = 1.0 / out.len() as f64;
        for e in &mut out {
            e.weight = 1.0;
            e.normalized_weight = uniform;
        }
    }
    let s = out[1..].iter().fold(out[0].normalized_weight * out[0].mean, |acc, e| {
        acc + e.normalized_weight * e.mean
    });
    Ok((out, s))
}

/// Score `x` with fresh draws from `seed` and its own motion mask.
pub fn score(
    model: &GeneratorHandle,
    x: &LatentVideo,
    c: &Condition,
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<ScoreBreakdown> {
    let mask = motion_mask(x)?;
    let draws = PerturbationDraws::new(model.latent_dims(), cfg, seed);
    score_with(model, x, c, cfg, &mask, &draws)
}

/// Score `x` with explicit mask and draws.
pub fn score_with(
    model: &GeneratorHandle,
    x: &LatentVideo,
    c: &Condition,
    cfg: &ScoreConfig,
    mask: &MotionMask,
    draws: &PerturbationDraws,
) -> Result<ScoreBreakdown> {
    cfg.validate()?;
    draws.check(cfg)?;
    let dims = model.latent_dims();
    if x.shape() != dims.shape() {
        return Err(Error::shape("score", x.shape(), &dims.shape()));
    }
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xv = g.constant(x.clone());
    let mut global = Vec::with_capacity(cfg.timesteps.len());
    let mut motion = Vec::with_capacity(cfg.timesteps.len());
    for (k, &t) in cfg.timesteps.values().iter().enumerate() {
        let mut gl = Vec::with_capacity(cfg.num_perturbations);
        let mut ml = Vec::with_capacity(cfg.num_perturbations);
        for n in 0..cfg.num_perturbations {
            let nodes = residual_nodes(&mut g, &bound, xv, draws.get(k, n), t, c, mask.values(), cfg)?;
            gl.push(scalar(&g, nodes.loss));
            ml.push(scalar(&g, nodes.masked));
        }
        global.push(estimate_from_losses(t, &gl, cfg));
        motion.push(estimate_from_losses(t, &ml, cfg));
    }
    let (global, s_global) = aggregate(&global, cfg)?;
    let (motion, s_motion) = aggregate(&motion, cfg)?;
    Ok(ScoreBreakdown {
        per_timestep: PerTimestep { global, motion },
        s_global,
        s_motion,
        s_hybrid: cfg.lambda * s_global + (1.0 - cfg.lambda) * s_motion,
    })
}

/// Score nodes on a graph.
#[derive(Debug, Clone, Copy)]
pub struct ScoreNodes {
    pub global: Var,
    pub motion: Var,
    pub hybrid: Var,
}

impl ScoreNodes {
    pub fn get(&self, variant: ScoreVariant) -> Var {
        match variant {
            ScoreVariant::Global => self.global,
            ScoreVariant::Motion => self.motion,
            ScoreVariant::Hybrid => self.hybrid,
        }
    }
}

fn chain_sum(g: &mut Graph, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(acc)
}

fn aggregate_nodes(g: &mut Graph, losses: &[Vec<Var>], cfg: &ScoreConfig) -> Result<Var> {
    let n_inv = 1.0 / cfg.num_perturbations as f64;
    let mut means = Vec::with_capacity(losses.len());
    let mut variances = Vec::with_capacity(losses.len());
    for row in losses {
        let sum = chain_sum(g, row)?;
        let mean = g.scale(sum, n_inv);
        let sqs: Vec<Var> = row
            .iter()
            .map(|&l| {
                let d = g.sub(l, mean)?;
                Ok(g.square(d))
            })
            .collect::<Result<_>>()?;
        let ss = chain_sum(g, &sqs)?;
        means.push(mean);
        variances.push(g.scale(ss, n_inv));
    }
    let weighted: Vec<Var> = if cfg.variance_weighting {
        let one = g.constant(Tensor::scalar(1.0));
        let eps = Tensor::scalar(cfg.epsilon_stability);
        let weights: Vec<Var> = variances
            .iter()
            .map(|&v| {
                let ve = g.add_const(v, &eps)?;
                g.div(one, ve)
            })
            .collect::<Result<_>>()?;
        let total = chain_sum(g, &weights)?;
        weights
            .iter()
            .zip(&means)
            .map(|(&w, &m)| {
                let wn = g.div(w, total)?;
                g.mul(wn, m)
            })
            .collect::<Result<_>>()?
    } else {
        let uniform = 1.0 / means.len() as f64;
        means.iter().map(|&m| g.scale(m, uniform)).collect()
    };
    chain_sum(g, &weighted)
}

/// Differentiable score of the latent node `x`. The mask is a constant.
pub fn score_differentiable(
    g: &mut Graph,
    model: &BoundGenerator<'_>,
    x: Var,
    c: &Condition,
    cfg: &ScoreConfig,
    mask: &MotionMask,
    draws: &PerturbationDraws,
) -> Result<ScoreNodes> {
    cfg.validate()?;
    draws.check(cfg)?;
    let mut global = Vec::with_capacity(cfg.timesteps.len());
    let mut motion = Vec::with_capacity(cfg.timesteps.len());
    for (k, &t) in cfg.timesteps.values().iter().enumerate() {
        let mut gl = Vec::with_capacity(cfg.num_perturbations);
        let mut ml = Vec::with_capacity(cfg.num_perturbations);
        for n in 0..cfg.num_perturbations {
            let nodes = residual_nodes(g, model, x, draws.get(k, n), t, c, mask.values(), cfg)?;
            gl.push(nodes.loss);
            ml.push(nodes.masked);
        }
        global.push(gl);
        motion.push(ml);
    }
    let sg = aggregate_nodes(g, &global, cfg)?;
    let sm = aggregate_nodes(g, &motion, cfg)?;
    let a = g.scale(sg, cfg.lambda);
    let b = g.scale(sm, 1.0 - cfg.lambda);
    let hybrid = g.add(a, b)?;
    Ok(ScoreNodes {
        global: sg,
        motion: sm,
        hybrid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{AnalyticGaussian, ConditionSpec, TinyNet, TinyNetArch};

    fn est(mean: f64, variance: f64) -> TimestepEstimate {
        TimestepEstimate {
            t: 0.5,
            mean,
            variance,
            weight: 0.0,
            normalized_weight: 0.0,
        }
    }

    #[test]
    fn aggregate_hand_example() {
        let cfg = ScoreConfig {
            epsilon_stability: 1e-300,
            ..ScoreConfig::default()
        };
        let (w, s) = aggregate(&[est(1.0, 0.1), est(2.0, 0.4)], &cfg).unwrap();
        assert!((w[0].weight - 10.0).abs() < 1e-9);
        assert!((w[1].weight - 2.5).abs() < 1e-9);
        assert!((w[0].normalized_weight - 0.8).abs() < 1e-12);
        assert!((w[1].normalized_weight - 0.2).abs() < 1e-12);
        assert!((s - 1.2).abs() < 1e-12);
    }

    #[test]
    fn aggregate_edge_cases() {
        let cfg = ScoreConfig::default();
        assert!(aggregate(&[], &cfg).is_err());
        let (w, s) = aggregate(&[est(3.5, 0.2)], &cfg).unwrap();
        assert_eq!(w[0].normalized_weight, 1.0);
        assert_eq!(s, 3.5);
        let (_, s) = aggregate(&[est(1.0, 0.3), est(2.0, 0.3), est(6.0, 0.3)], &cfg).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        let off = ScoreConfig::few_step();
        let (w, s) = aggregate(&[est(1.0, 0.0), est(4.0, 9.0)], &off).unwrap();
        assert_eq!(w[0].normalized_weight, 0.5);
        assert_eq!(s, 2.5);
    }

    #[test]
    fn mean_variance_divisor_n() {
        assert_eq!(mean_variance(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_variance(&[4.2]).1, 0.0);
        assert_eq!(mean_variance(&[0.5, 0.5, 0.5, 0.5]).1, 0.0);
    }

    #[test]
    fn constant_velocity_hand_case() {
        // v̂ ≡ 3 on a 1×1×1×1 latent via a net with only the output bias set
        let mut arch = TinyNetArch::new(LatentDims::new(1, 1, 1, 1), ConditionSpec::ClassId { num_classes: 1 });
        arch.hidden = alloc::vec![2];
        let layout = arch.layout();
        let mut params = alloc::vec![0.0; arch.param_count()];
        let mut off = 0;
        for (name, shape) in &layout {
            let n: usize = shape.iter().product();
            if name == "out.bias" {
                params[off] = 3.0;
            }
            off += n;
        }
        let net: GeneratorHandle = TinyNet::new(arch, Tensor::from_vec(&[params.len()], params).unwrap())
            .unwrap()
            .into();
        let x = Tensor::ones(&[1, 1, 1, 1]);
        let eps = Tensor::full(&[1, 1, 1, 1], 2.0);
        let rec = residual_loss(&net, &x, &eps, 0.5, &Condition::ClassId(0), &ScoreConfig::default(), None, 0)
            .unwrap();
        assert_eq!(rec.loss, 4.0);
        let zero = MotionMask::from_values(Tensor::zeros(&[1, 1, 1])).unwrap();
        let rec = residual_loss(&net, &x, &eps, 0.5, &Condition::ClassId(0), &ScoreConfig::default(), Some(&zero), 0)
            .unwrap();
        assert_eq!(rec.masked_loss, 0.0);
    }

    #[test]
    fn perfect_prediction_gives_zero_loss() {
        // m = x and ε chosen so that v̂ = v*: for the analytic model at t with
        // z = (1−t)m + tε, v̂ = gain·tε − m and v* = ε − m; equal when ε = 0.
        let dims = LatentDims::new(1, 2, 2, 1);
        let m = Tensor::from_vec(&dims.shape(), alloc::vec![0.5, -0.25, 1.0, 2.0]).unwrap();
        let g: GeneratorHandle = AnalyticGaussian::new(m.clone(), 0.8).unwrap().into();
        let rec = residual_loss(&g, &m, &Tensor::zeros(&dims.shape()), 0.4, &Condition::ClassId(0), &ScoreConfig::default(), None, 0)
            .unwrap();
        assert_eq!(rec.loss, 0.0);
    }

    #[test]
    fn single_perturbation_has_zero_variance() {
        let dims = LatentDims::new(2, 2, 2, 1);
        let g: GeneratorHandle = AnalyticGaussian::isotropic(dims, 0.0, 1.0).unwrap().into();
        let x = Tensor::randn(&dims.shape(), &mut substream(2, &[]));
        let cfg = ScoreConfig {
            num_perturbations: 1,
            ..ScoreConfig::default()
        };
        let (gl, mo) = estimate_timestep(&g, &x, 0.4, &Condition::ClassId(0), &cfg, None, 9).unwrap();
        assert_eq!(gl.variance, 0.0);
        assert_eq!(mo.variance, 0.0);
    }

    #[test]
    fn config_validation() {
        let c = ScoreConfig { lambda: 1.5, ..ScoreConfig::default() };
        assert!(c.validate().is_err());
        let c = ScoreConfig { num_perturbations: 0, ..ScoreConfig::default() };
        assert!(c.validate().is_err());
    }
}
