//! Best-of-N selection over sampled candidates.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{Condition, GeneratorHandle};
use crate::rng::{substream_seed, tag};
use crate::scheduler::{base_noise, sample, SamplerConfig};
use crate::scoring::{score, ScoreBreakdown, ScoreConfig, ScoreVariant};
use crate::tensor::LatentVideo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct PoolConfig {
    pub candidates: usize,
    pub sampler: SamplerConfig,
    pub score: ScoreConfig,
    pub variant: ScoreVariant,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            candidates: 16,
            sampler: SamplerConfig::default(),
            score: ScoreConfig::default(),
            variant: ScoreVariant::Motion,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub seed: u64,
    pub latent: LatentVideo,
    pub score: ScoreBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    condition: Condition,
    candidates: Vec<Candidate>,
    variant: ScoreVariant,
}

impl CandidatePool {
    pub fn new(condition: Condition, candidates: Vec<Candidate>, variant: ScoreVariant) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("candidate pool is empty"));
        }
        let shape = candidates[0].latent.shape();
        if candidates.iter().any(|c| c.latent.shape() != shape) {
            return Err(Error::invalid("candidates differ in latent dims"));
        }
        let mut seeds: Vec<u64> = candidates.iter().map(|c| c.seed).collect();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("candidate seeds must be distinct"));
        }
        Ok(Self {
            condition,
            candidates,
            variant,
        })
    }

    pub fn condition(&self) -> &Condition {
        &self.condition
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn variant(&self) -> ScoreVariant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.score.get(self.variant)).collect()
    }

    pub fn summary(&self, selected: usize) -> PoolSummary {
        PoolSummary {
            condition_id: self.condition.id(),
            variant: self.variant,
            candidates: self
                .candidates
                .iter()
                .map(|c| CandidateSummary {
                    seed: c.seed,
                    s_global: c.score.s_global,
                    s_motion: c.score.s_motion,
                    s_hybrid: c.score.s_hybrid,
                })
                .collect(),
            selected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateSummary {
    pub seed: u64,
    pub s_global: f64,
    pub s_motion: f64,
    pub s_hybrid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PoolSummary {
    pub condition_id: String,
    pub variant: ScoreVariant,
    pub candidates: Vec<CandidateSummary>,
    pub selected: usize,
}

pub fn candidate_seed(master_seed: u64, index: usize) -> u64 {
    substream_seed(master_seed, &[tag::CANDIDATE, index as u64])
}

/// Sample and score candidate `index`; depends only on `(master_seed, index)`.
pub fn generate_candidate(
    model: &GeneratorHandle,
    c: &Condition,
    cfg: &PoolConfig,
    master_seed: u64,
    index: usize,
) -> Result<Candidate> {
    let seed = candidate_seed(master_seed, index);
    let zeta = base_noise(model, seed);
    let latent = sample(model, &zeta, c, &cfg.sampler)?;
    let s = score(model, &latent, c, &cfg.score, substream_seed(seed, &[tag::PERTURB]))?;
    Ok(Candidate {
        seed,
        latent,
        score: s,
    })
}

pub fn generate_pool(
    model: &GeneratorHandle,
    c: &Condition,
    cfg: &PoolConfig,
    master_seed: u64,
) -> Result<CandidatePool> {
    if cfg.candidates == 0 {
        return Err(Error::invalid("pool size must be at least 1"));
    }
    let candidates = (0..cfg.candidates)
        .map(|i| generate_candidate(model, c, cfg, master_seed, i))
        .collect::<Result<Vec<_>>>()?;
    CandidatePool::new(c.clone(), candidates, cfg.variant)
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn select_best(pool: &CandidatePool) -> Result<usize> {
    argmin(&pool.scores()).ok_or_else(|| Error::invalid("candidate pool is empty"))
}

pub fn select_random<R: Rng + ?Sized>(pool: &CandidatePool, rng: &mut R) -> Result<usize> {
    select_random_index(pool.len(), rng)
}

pub fn select_random_index<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("candidate pool is empty"));
    }
    Ok(rng.random_range(0..n))
}
