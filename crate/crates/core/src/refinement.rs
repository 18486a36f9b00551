//! Self-refinement of the initial sampling noise.
//!
//! The noise is reparameterized per channel as `ζ = μ + σ ⊙ ζ₀` with
//! `σ = exp(log σ)`. Each iteration generates `z₀(ζ; c)` with a short
//! differentiable sampler, scores it, adds `β·KL(N(μ,σ²) ‖ N(0,1))` averaged
//! over channels, backpropagates to `(μ, log σ)`, clips the joint gradient
//! norm and takes an Adam step. The returned latent is the one with the
//! lowest unregularized score among all evaluated iterates, the unrefined
//! start included.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::generator::{Condition, GeneratorHandle};
use crate::masking::{motion_mask, MotionMask};
use crate::optim::{clip_global_norm, l2_norm, AdamConfig, AdamState};
use crate::rng::{substream_seed, tag};
use crate::scheduler::{base_noise, sample, sample_node, SamplerConfig};
use crate::scoring::{score_differentiable, PerturbationDraws, ScoreConfig, ScoreVariant};
use crate::tensor::{LatentDims, LatentVideo, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct RefineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub beta: f64,
    pub perturb_samples: usize,
    pub sampler_steps: usize,
    pub score_variant: ScoreVariant,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            learning_rate: 2e-3,
            clip_norm: 3e-4,
            beta: 5e-3,
            perturb_samples: 4,
            sampler_steps: SamplerConfig::REFINEMENT_STEPS,
            score_variant: ScoreVariant::Motion,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.perturb_samples == 0 || self.sampler_steps == 0 {
            return Err(Error::invalid("refinement counts must be positive"));
        }
        for (what, v) in [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("beta", self.beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange { what, value: v });
            }
        }
        Ok(())
    }
}

/// Per-channel Gaussian-affine noise parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RefineParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub base_noise: Tensor,
}

impl RefineParams {
    /// `μ = 0`, `σ = 1`.
    pub fn identity(base_noise: Tensor) -> Result<Self> {
        let c = LatentDims::of(&base_noise)?.channels;
        Ok(Self {
            mu: vec![0.0; c],
            log_sigma: vec![0.0; c],
            base_noise,
        })
    }

    pub fn channels(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|&l| libm::exp(l)).collect()
    }

    /// `ζ = μ + σ ⊙ ζ₀`, broadcast over the channel axis.
    pub fn noise(&self) -> Tensor {
        let sigma = self.sigma();
        let c = self.channels();
        let data = self
            .base_noise
            .data()
            .iter()
            .enumerate()
            .map(|(i, z)| z * sigma[i % c] + self.mu[i % c])
            .collect();
        Tensor::from_vec(self.base_noise.shape(), data).expect("same shape")
    }
}

/// `(1/C)·Σ_d ½(μ_d² + σ_d² − 1 − 2 log σ_d)`.
pub fn kl_loss(params: &RefineParams) -> f64 {
    kl_value(&params.mu, &params.log_sigma)
}

fn kl_value(mu: &[f64], log_sigma: &[f64]) -> f64 {
    let c = mu.len() as f64;
    mu.iter()
        .zip(log_sigma)
        .map(|(&m, &l)| {
            let s = libm::exp(l);
            0.5 * (m * m + s * s - 1.0 - 2.0 * l)
        })
        .sum::<f64>()
        / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RefineIterate {
    pub iteration: usize,
    pub raw_score: f64,
    pub kl_loss: f64,
    pub total_loss: f64,
    /// Gradient norm after clipping.
    pub grad_norm: f64,
    pub raw_grad_norm: f64,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RefineTrace {
    pub iterates: Vec<RefineIterate>,
    pub best_iteration: usize,
    pub best_latent: LatentVideo,
    pub mask: MotionMask,
    /// `μ` after the last update.
    pub final_mu: Vec<f64>,
    /// `log σ` after the last update.
    pub final_log_sigma: Vec<f64>,
}

impl RefineTrace {
    pub fn best_score(&self) -> f64 {
        self.iterates[self.best_iteration].raw_score
    }

    pub fn initial_score(&self) -> f64 {
        self.iterates[0].raw_score
    }
}

/// Objective value and gradient at one `(μ, log σ)`.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub raw_score: f64,
    pub kl_loss: f64,
    pub total_loss: f64,
    pub latent: LatentVideo,
    pub grad_mu: Vec<f64>,
    pub grad_log_sigma: Vec<f64>,
}

/// `L(μ, log σ) = S(z₀(μ + σ⊙ζ₀; c); c) + β·L_KL` with frozen mask and draws.
#[derive(Debug)]
pub struct RefineObjective<'a> {
    pub model: &'a GeneratorHandle,
    pub condition: &'a Condition,
    pub base_noise: &'a Tensor,
    pub mask: &'a MotionMask,
    pub draws: &'a PerturbationDraws,
    pub score: &'a ScoreConfig,
    pub beta: f64,
    pub sampler_steps: usize,
    pub variant: ScoreVariant,
}

impl RefineObjective<'_> {
    pub fn evaluate(&self, mu: &[f64], log_sigma: &[f64]) -> Result<ObjectiveEval> {
        let c = self.model.latent_dims().channels;
        if mu.len() != c || log_sigma.len() != c {
            return Err(Error::shape("refine params", &[mu.len(), log_sigma.len()], &[c]));
        }
        let mut g = Graph::new();
        let bound = self.model.bind(&mut g);
        let mu_v = g.param(Tensor::from_vec(&[c], mu.to_vec())?);
        let ls_v = g.param(Tensor::from_vec(&[c], log_sigma.to_vec())?);
        let sigma = g.exp(ls_v);
        let base = g.constant(self.base_noise.clone());
        let scaled = g.mul(base, sigma)?;
        let zeta = g.add(scaled, mu_v)?;
        let z0 = sample_node(&mut g, &bound, zeta, self.condition, self.sampler_steps)?;
        let nodes = score_differentiable(&mut g, &bound, z0, self.condition, self.score, self.mask, self.draws)?;
        let s = nodes.get(self.variant);
        let kl = kl_node(&mut g, mu_v, ls_v, sigma, c)?;
        let weighted = g.scale(kl, self.beta);
        let total = g.add(s, weighted)?;
        let grads = g.backward(total)?;
        let value = |v: Var| g.value(v).item().expect("scalar");
        Ok(ObjectiveEval {
            raw_score: value(s),
            kl_loss: value(kl),
            total_loss: value(total),
            latent: g.value(z0).clone(),
            grad_mu: grads.get_or_zeros(mu_v, &[c]).into_data(),
            grad_log_sigma: grads.get_or_zeros(ls_v, &[c]).into_data(),
        })
    }
}

fn kl_node(g: &mut Graph, mu: Var, ls: Var, sigma: Var, c: usize) -> Result<Var> {
    let mu2 = g.square(mu);
    let s2 = g.square(sigma);
    let a = g.add(mu2, s2)?;
    let a = g.add_const(a, &Tensor::full(&[c], -1.0))?;
    let l2 = g.scale(ls, -2.0);
    let a = g.add(a, l2)?;
    let total = g.sum(a);
    Ok(g.scale(total, 0.5 / c as f64))
}

/// Run self-refinement from the noise of `seed`.
pub fn refine(
    model: &GeneratorHandle,
    c: &Condition,
    seed: u64,
    rcfg: &RefineConfig,
    scfg: &ScoreConfig,
) -> Result<RefineTrace> {
    refine_from(model, c, base_noise(model, seed), seed, rcfg, scfg)
}

/// Run self-refinement from an explicit base noise `ζ₀`; `seed` keys the
/// per-iteration perturbation draws.
pub fn refine_from(
    model: &GeneratorHandle,
    c: &Condition,
    base: Tensor,
    seed: u64,
    rcfg: &RefineConfig,
    scfg: &ScoreConfig,
) -> Result<RefineTrace> {
    rcfg.validate()?;
    let dims = model.latent_dims();
    if base.shape() != dims.shape() {
        return Err(Error::shape("refine base noise", base.shape(), &dims.shape()));
    }
    let score_cfg = ScoreConfig {
        num_perturbations: rcfg.perturb_samples,
        ..scfg.clone()
    };
    score_cfg.validate()?;
    let initial = sample(model, &base, c, &SamplerConfig::new(rcfg.sampler_steps, seed))?;
    let mask = motion_mask(&initial)?;

    let ch = dims.channels;
    let mut params = vec![0.0; 2 * ch];
    let mut adam = AdamState::new(2 * ch, AdamConfig::default());
    let mut iterates: Vec<RefineIterate> = Vec::with_capacity(rcfg.steps);
    let mut best: Option<(usize, f64, LatentVideo)> = None;

    for n in 0..rcfg.steps {
        let draws = PerturbationDraws::new(dims, &score_cfg, substream_seed(seed, &[tag::REFINE, n as u64]));
        let objective = RefineObjective {
            model,
            condition: c,
            base_noise: &base,
            mask: &mask,
            draws: &draws,
            score: &score_cfg,
            beta: rcfg.beta,
            sampler_steps: rcfg.sampler_steps,
            variant: rcfg.score_variant,
        };
        let (mu, ls) = params.split_at(ch);
        let eval = objective.evaluate(mu, ls)?;
        let mut grad: Vec<f64> = eval.grad_mu.iter().chain(&eval.grad_log_sigma).copied().collect();
        let finite = eval.total_loss.is_finite() && grad.iter().all(|g| g.is_finite());
        if !finite {
            return Err(Error::RefineAborted {
                iteration: n,
                iterates,
            });
        }
        let raw_grad_norm = clip_global_norm(&mut grad, rcfg.clip_norm);
        iterates.push(RefineIterate {
            iteration: n,
            raw_score: eval.raw_score,
            kl_loss: eval.kl_loss,
            total_loss: eval.total_loss,
            grad_norm: l2_norm(&grad),
            raw_grad_norm,
            mu: mu.to_vec(),
            log_sigma: ls.to_vec(),
        });
        if best.as_ref().is_none_or(|(_, s, _)| eval.raw_score < *s) {
            best = Some((n, eval.raw_score, eval.latent));
        }
        adam.step(&mut params, &grad, rcfg.learning_rate)?;
    }

    let (best_iteration, _, best_latent) = best.expect("steps >= 1");
    let (final_mu, final_log_sigma) = params.split_at(ch);
    Ok(RefineTrace {
        iterates,
        best_iteration,
        best_latent,
        mask,
        final_mu: final_mu.to_vec(),
        final_log_sigma: final_log_sigma.to_vec(),
    })
}
