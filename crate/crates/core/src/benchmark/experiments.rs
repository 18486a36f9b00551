//! Diagnostic preference, ablation tables and best-of-N evaluation.
//!
//! Every per-item function depends only on its inputs and the item index, so
//! callers may evaluate items in any order or in parallel and then assemble
//! the results with the `from_*` / `summarize_*` helpers.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{
    corrupt, plausibility_metric, render_dynamics, sample_dynamics, CorruptionKind, CorruptionSpec,
    DynamicsSpec, NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::generator::{Condition, GeneratorHandle};
use crate::rng::{substream, substream_seed, tag};
use crate::scheduler::mid_noise_timesteps;
use crate::scoring::{score, ScoreConfig, ScoreVariant};
use crate::search::{argmin, generate_pool, select_random_index, PoolConfig};
use crate::tensor::{LatentDims, LatentVideo};

/// A plausible video and its procedurally corrupted twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnosticPair {
    pub index: usize,
    pub dynamics: DynamicsSpec,
    pub corruption: CorruptionSpec,
    pub plausible: LatentVideo,
    pub corrupted: LatentVideo,
}

impl DiagnosticPair {
    pub fn condition(&self) -> Condition {
        self.dynamics.condition()
    }
}

/// Pair `index`: a sampled trajectory corrupted by kind `index mod 4` with
/// default magnitude and onset `T/2`.
pub fn make_pair(dims: LatentDims, seed: u64, index: usize) -> Result<DiagnosticPair> {
    let item = substream_seed(seed, &[tag::DATA, index as u64]);
    let dynamics = sample_dynamics(dims, item);
    let kind = CorruptionKind::ALL[index % CorruptionKind::ALL.len()];
    let corruption = CorruptionSpec::default_for(kind, dims.frames);
    let plausible = render_dynamics(&dynamics)?;
    let corrupted = corrupt(&plausible, &dynamics, &corruption, item)?;
    Ok(DiagnosticPair {
        index,
        dynamics,
        corruption,
        plausible,
        corrupted,
    })
}

pub fn make_pairs(dims: LatentDims, count: usize, seed: u64) -> Result<Vec<DiagnosticPair>> {
    (0..count).map(|i| make_pair(dims, seed, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairScore {
    pub index: usize,
    pub corruption: CorruptionKind,
    pub plausible: f64,
    pub corrupted: f64,
    pub preferred_plausible: bool,
}

/// Score both members with the same perturbation draws and compare `S_motion`.
/// A tie is not a preference.
pub fn score_pair(model: &GeneratorHandle, pair: &DiagnosticPair, cfg: &ScoreConfig, seed: u64) -> Result<PairScore> {
    let c = pair.condition();
    let s = substream_seed(seed, &[tag::PERTURB, pair.index as u64]);
    let plausible = score(model, &pair.plausible, &c, cfg, s)?.s_motion;
    let corrupted = score(model, &pair.corrupted, &c, cfg, s)?.s_motion;
    Ok(PairScore {
        index: pair.index,
        corruption: pair.corruption.kind,
        plausible,
        corrupted,
        preferred_plausible: plausible < corrupted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiagnosticResult {
    pub pairs: usize,
    pub preferred_plausible: usize,
    pub preference_rate: f64,
    pub per_pair: Vec<PairScore>,
}

impl DiagnosticResult {
    pub fn from_scores(per_pair: Vec<PairScore>) -> Result<Self> {
        if per_pair.is_empty() {
            return Err(Error::invalid("no diagnostic pairs"));
        }
        let preferred = per_pair.iter().filter(|p| p.preferred_plausible).count();
        Ok(Self {
            pairs: per_pair.len(),
            preferred_plausible: preferred,
            preference_rate: preferred as f64 / per_pair.len() as f64,
            per_pair,
        })
    }

    pub fn mean_plausible(&self) -> f64 {
        self.per_pair.iter().map(|p| p.plausible).sum::<f64>() / self.pairs as f64
    }

    pub fn mean_corrupted(&self) -> f64 {
        self.per_pair.iter().map(|p| p.corrupted).sum::<f64>() / self.pairs as f64
    }

    /// Preference rate restricted to one corruption kind.
    pub fn rate_for(&self, kind: CorruptionKind) -> Option<f64> {
        let sel: Vec<&PairScore> = self.per_pair.iter().filter(|p| p.corruption == kind).collect();
        if sel.is_empty() {
            return None;
        }
        Some(sel.iter().filter(|p| p.preferred_plausible).count() as f64 / sel.len() as f64)
    }
}

pub fn diagnostic_preference(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<DiagnosticResult> {
    let scores = pairs
        .iter()
        .map(|p| score_pair(model, p, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    DiagnosticResult::from_scores(scores)
}

/// A timestep range `(lo, hi, k)` for the noise-range ablation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRange {
    pub lo: f64,
    pub hi: f64,
    pub k: usize,
}

impl NoiseRange {
    pub fn label(&self) -> String {
        alloc::format!("{}-{}x{}", self.lo, self.hi, self.k)
    }

    /// `(0.2, 0.8, 4)` and `(0.3, 0.6, 4)`.
    pub fn default_pair() -> Vec<NoiseRange> {
        alloc::vec![
            NoiseRange { lo: 0.2, hi: 0.8, k: 4 },
            NoiseRange { lo: 0.3, hi: 0.6, k: 4 },
        ]
    }

    pub fn score_config(&self, base: &ScoreConfig) -> Result<ScoreConfig> {
        Ok(ScoreConfig {
            timesteps: mid_noise_timesteps(self.k, self.lo, self.hi)?,
            ..base.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub label: String,
    pub preference_rate: f64,
    pub mean_plausible: f64,
    pub mean_corrupted: f64,
}

impl AblationRow {
    pub fn from_result(label: String, r: &DiagnosticResult) -> Self {
        Self {
            label,
            preference_rate: r.preference_rate,
            mean_plausible: r.mean_plausible(),
            mean_corrupted: r.mean_corrupted(),
        }
    }
}

pub fn noise_range_ablation(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    base: &ScoreConfig,
    ranges: &[NoiseRange],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    ranges
        .iter()
        .map(|r| {
            let res = diagnostic_preference(model, pairs, &r.score_config(base)?, seed)?;
            Ok(AblationRow::from_result(r.label(), &res))
        })
        .collect()
}

/// Rows `variance-weighting=on` and `=off` on the same pairs and draws.
pub fn variance_weighting_ablation(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    base: &ScoreConfig,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    [true, false]
        .iter()
        .map(|&on| {
            let cfg = ScoreConfig {
                variance_weighting: on,
                ..base.clone()
            };
            let res = diagnostic_preference(model, pairs, &cfg, seed)?;
            let label = if on { "variance-weighting=on" } else { "variance-weighting=off" };
            Ok(AblationRow::from_result(label.into(), &res))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMethod {
    Random,
    ProprioGlobal,
    ProprioMotion,
    ProprioHybrid,
    Oracle,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 5] = [
        SelectionMethod::Random,
        SelectionMethod::ProprioGlobal,
        SelectionMethod::ProprioMotion,
        SelectionMethod::ProprioHybrid,
        SelectionMethod::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Random => "random",
            SelectionMethod::ProprioGlobal => "proprio-global",
            SelectionMethod::ProprioMotion => "proprio-motion",
            SelectionMethod::ProprioHybrid => "proprio-hybrid",
            SelectionMethod::Oracle => "oracle",
        }
    }
}

/// One condition's pool: per-candidate scores and ground-truth metric, and
/// the index each method picks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConditionSelection {
    pub index: usize,
    pub condition_id: String,
    pub s_global: Vec<f64>,
    pub s_motion: Vec<f64>,
    pub s_hybrid: Vec<f64>,
    pub metric: Vec<f64>,
    pub selected: Vec<(SelectionMethod, usize)>,
}

impl ConditionSelection {
    pub fn selected_by(&self, m: SelectionMethod) -> usize {
        self.selected.iter().find(|(k, _)| *k == m).map(|&(_, i)| i).expect("all methods recorded")
    }

    pub fn metric_of(&self, m: SelectionMethod) -> f64 {
        self.metric[self.selected_by(m)]
    }
}

/// Condition `index` cycles through the class labels.
pub fn selection_condition(index: usize) -> Condition {
    Condition::ClassId(index as u32 % NUM_CLASSES)
}

pub fn evaluate_condition(
    model: &GeneratorHandle,
    cfg: &PoolConfig,
    seed: u64,
    index: usize,
) -> Result<ConditionSelection> {
    let c = selection_condition(index);
    let pool = generate_pool(model, &c, cfg, substream_seed(seed, &[tag::CANDIDATE, index as u64]))?;
    let get = |v: ScoreVariant| -> Vec<f64> { pool.candidates().iter().map(|k| k.score.get(v)).collect() };
    let (g, m, h) = (get(ScoreVariant::Global), get(ScoreVariant::Motion), get(ScoreVariant::Hybrid));
    let metric = pool
        .candidates()
        .iter()
        .map(|k| plausibility_metric(&k.latent))
        .collect::<Result<Vec<f64>>>()?;
    let pick = |v: &[f64]| argmin(v).expect("non-empty pool");
    let random = select_random_index(pool.len(), &mut substream(seed, &[tag::SELECT, index as u64]))?;
    let selected = alloc::vec![
        (SelectionMethod::Random, random),
        (SelectionMethod::ProprioGlobal, pick(&g)),
        (SelectionMethod::ProprioMotion, pick(&m)),
        (SelectionMethod::ProprioHybrid, pick(&h)),
        (SelectionMethod::Oracle, pick(&metric)),
    ];
    Ok(ConditionSelection {
        index,
        condition_id: c.id(),
        s_global: g,
        s_motion: m,
        s_hybrid: h,
        metric,
        selected,
    })
}

/// Percentile bootstrap interval for a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Result<MeanCi> {
    if values.is_empty() || resamples == 0 {
        return Err(Error::invalid("bootstrap needs values and resamples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::OutOfRange { what: "confidence level", value: level });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut rng = substream(seed, &[tag::BOOTSTRAP]);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q = |p: f64| means[(libm::round(p * (resamples - 1) as f64) as usize).min(resamples - 1)];
    let alpha = (1.0 - level) / 2.0;
    Ok(MeanCi { mean, lo: q(alpha), hi: q(1.0 - alpha) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionRow {
    pub method: SelectionMethod,
    pub mean_metric: f64,
    pub ci: MeanCi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionReport {
    pub conditions: usize,
    pub pool_size: usize,
    pub rows: Vec<SelectionRow>,
    /// Per-condition `metric(proprio-motion) − metric(random)`.
    pub motion_minus_random: MeanCi,
}

impl SelectionReport {
    pub fn row(&self, m: SelectionMethod) -> &SelectionRow {
        self.rows.iter().find(|r| r.method == m).expect("all methods present")
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

pub fn summarize_selection(per_condition: &[ConditionSelection], seed: u64) -> Result<SelectionReport> {
    if per_condition.is_empty() {
        return Err(Error::invalid("no conditions evaluated"));
    }
    let rows = SelectionMethod::ALL
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let v: Vec<f64> = per_condition.iter().map(|c| c.metric_of(m)).collect();
            let ci = bootstrap_mean_ci(&v, BOOTSTRAP_RESAMPLES, 0.95, substream_seed(seed, &[i as u64]))?;
            Ok(SelectionRow { method: m, mean_metric: ci.mean, ci })
        })
        .collect::<Result<Vec<_>>>()?;
    let diff: Vec<f64> = per_condition
        .iter()
        .map(|c| c.metric_of(SelectionMethod::ProprioMotion) - c.metric_of(SelectionMethod::Random))
        .collect();
    let motion_minus_random = bootstrap_mean_ci(&diff, BOOTSTRAP_RESAMPLES, 0.95, substream_seed(seed, &[99]))?;
    Ok(SelectionReport {
        conditions: per_condition.len(),
        pool_size: per_condition[0].metric.len(),
        rows,
        motion_minus_random,
    })
}

pub fn evaluate_selection(
    model: &GeneratorHandle,
    conditions: usize,
    cfg: &PoolConfig,
    seed: u64,
) -> Result<(Vec<ConditionSelection>, SelectionReport)> {
    let per = (0..conditions)
        .map(|i| evaluate_condition(model, cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let report = summarize_selection(&per, seed)?;
    Ok((per, report))
}
