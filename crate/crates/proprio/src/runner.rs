//! Item-parallel versions of the core experiments.
//!
//! Each item is computed from its index alone and results are collected in
//! index order, so outputs do not depend on the worker count.

use proprio_core::benchmark::{
    evaluate_condition, score_pair, summarize_selection, AblationRow, ConditionSelection, DiagnosticPair,
    DiagnosticResult, NoiseRange, SelectionReport,
};
use proprio_core::generator::{Condition, GeneratorHandle};
use proprio_core::scoring::ScoreConfig;
use proprio_core::search::{generate_candidate, CandidatePool, PoolConfig};
use proprio_core::Result;
use rayon::prelude::*;

/// A thread pool with `workers` threads (at least one).
pub fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

pub fn par_map<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    pool(workers).install(|| (0..n).into_par_iter().map(f).collect())
}

pub fn generate_pool_par(
    model: &GeneratorHandle,
    c: &Condition,
    cfg: &PoolConfig,
    master_seed: u64,
    workers: usize,
) -> Result<CandidatePool> {
    let candidates = par_map(workers, cfg.candidates, |i| generate_candidate(model, c, cfg, master_seed, i))?;
    CandidatePool::new(c.clone(), candidates, cfg.variant)
}

pub fn diagnostic_par(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    cfg: &ScoreConfig,
    seed: u64,
    workers: usize,
) -> Result<DiagnosticResult> {
    let scores = par_map(workers, pairs.len(), |i| score_pair(model, &pairs[i], cfg, seed))?;
    DiagnosticResult::from_scores(scores)
}

pub fn noise_ablation_par(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    base: &ScoreConfig,
    ranges: &[NoiseRange],
    seed: u64,
    workers: usize,
) -> Result<Vec<(AblationRow, DiagnosticResult)>> {
    ranges
        .iter()
        .map(|r| {
            let res = diagnostic_par(model, pairs, &r.score_config(base)?, seed, workers)?;
            Ok((AblationRow::from_result(r.label(), &res), res))
        })
        .collect()
}

pub fn variance_ablation_par(
    model: &GeneratorHandle,
    pairs: &[DiagnosticPair],
    base: &ScoreConfig,
    seed: u64,
    workers: usize,
) -> Result<Vec<(AblationRow, DiagnosticResult)>> {
    [true, false]
        .iter()
        .map(|&on| {
            let cfg = ScoreConfig {
                variance_weighting: on,
                ..base.clone()
            };
            let res = diagnostic_par(model, pairs, &cfg, seed, workers)?;
            let label = if on { "variance-weighting=on" } else { "variance-weighting=off" };
            Ok((AblationRow::from_result(label.into(), &res), res))
        })
        .collect()
}

pub fn selection_par(
    model: &GeneratorHandle,
    conditions: usize,
    cfg: &PoolConfig,
    seed: u64,
    workers: usize,
) -> Result<(Vec<ConditionSelection>, SelectionReport)> {
    let per = par_map(workers, conditions, |i| evaluate_condition(model, cfg, seed, i))?;
    let report = summarize_selection(&per, seed)?;
    Ok((per, report))
}
