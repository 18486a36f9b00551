//! The `proprio` command-line tool.
//!
//! Exit status is 0 on success, 1 on a usage or configuration error and 2
//! on a runtime error. Every command writes `manifest.json` into `--out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use proprio_core::benchmark::{make_pairs, CorruptionKind, DiagnosticResult};
use proprio_core::benchmark::plausible_dataset;
use proprio_core::generator::{AnalyticGaussian, GeneratorHandle};
use proprio_core::search::{candidate_seed, select_best, PoolConfig};
use proprio_core::{scheduler, scoring, Error as CoreError};
use serde::Serialize;

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{ConfigError, GeneratorSource, RunConfig};
use crate::lvid::{read_lvid, write_lvid};
use crate::manifest::RunManifest;
use crate::report;
use crate::runner;

#[derive(Debug, Parser)]
#[command(name = "proprio", version, about = "Self-scoring and noise refinement for flow-matching latent video generators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for item-parallel stages.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tiny-net generator on bouncing-blob videos.
    TrainGen(Common),
    /// Sample latent videos.
    Gen(Common),
    /// Score one latent video and print the breakdown as JSON.
    Score {
        #[command(flatten)]
        common: Common,
        /// LVID file to score.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Best-of-N search over a candidate pool.
    Search(Common),
    /// Self-refine the initial noise of one sample.
    Refine(Common),
    /// Plausible-vs-corrupted preference diagnostic.
    Diagnose(Common),
    /// Compare noise ranges on the diagnostic.
    AblateNoise(Common),
    /// Compare variance weighting on and off on the diagnostic.
    AblateVariance(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainGen(_) => "train-gen",
            Command::Gen(_) => "gen",
            Command::Score { .. } => "score",
            Command::Search(_) => "search",
            Command::Refine(_) => "refine",
            Command::Diagnose(_) => "diagnose",
            Command::AblateNoise(_) => "ablate-noise",
            Command::AblateVariance(_) => "ablate-variance",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::TrainGen(c)
            | Command::Gen(c)
            | Command::Search(c)
            | Command::Refine(c)
            | Command::Diagnose(c)
            | Command::AblateNoise(c)
            | Command::AblateVariance(c) => c,
            Command::Score { common, .. } => common,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Runtime(anyhow!(e))
    }
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// Files written by a command, relative to `--out`.
struct Run {
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(PathBuf::from(name));
        self.out.join(name)
    }
}

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            ConfigError::Io { .. } => Failure::Runtime(anyhow!(e)),
            other => Failure::Usage(anyhow!(other)),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<(), Failure> {
    let start = Instant::now();
    let common = cmd.common();
    let cfg = load_config(common)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let mut run = Run {
        out: common.out.clone(),
        inputs: common.config.iter().cloned().collect(),
        outputs: Vec::new(),
    };
    let workers = common.workers as usize;

    match cmd {
        Command::TrainGen(_) => train_gen(&cfg, &mut run)?,
        Command::Gen(_) => gen(&cfg, &mut run, workers)?,
        Command::Score { input, .. } => score(&cfg, &mut run, input)?,
        Command::Search(_) => search(&cfg, &mut run, workers)?,
        Command::Refine(_) => refine(&cfg, &mut run)?,
        Command::Diagnose(_) => diagnose(&cfg, &mut run, workers)?,
        Command::AblateNoise(_) => ablate_noise(&cfg, &mut run, workers)?,
        Command::AblateVariance(_) => ablate_variance(&cfg, &mut run, workers)?,
    }

    let manifest = RunManifest {
        command: cmd.name().to_string(),
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        inputs: run.inputs,
        outputs: run.outputs,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock: start.elapsed().as_secs_f64(),
    };
    manifest
        .write_atomic(&common.out)
        .with_context(|| format!("writing manifest in {}", common.out.display()))?;
    Ok(())
}

fn load_generator(cfg: &RunConfig, run: &mut Run) -> Result<GeneratorHandle, Failure> {
    let g: GeneratorHandle = match &cfg.generator {
        GeneratorSource::AnalyticGaussian { mean, scale } => AnalyticGaussian::isotropic(cfg.dims, *mean, *scale)?.into(),
        GeneratorSource::Checkpoint { path } => {
            run.inputs.push(path.clone());
            read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?
        }
    };
    if g.latent_dims() != cfg.dims {
        return Err(Failure::Usage(anyhow!(
            "generator dims {:?} differ from configured dims {:?}",
            g.latent_dims(),
            cfg.dims
        )));
    }
    Ok(g)
}

fn train_gen(cfg: &RunConfig, run: &mut Run) -> Result<(), Failure> {
    let data = plausible_dataset(cfg.dims, cfg.train.dataset_size, cfg.seed)?;
    let train = proprio_core::generator::TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let trained = proprio_core::generator::train_flow_model(cfg.arch.to_arch(cfg.dims), &train, &data)?;
    write_checkpoint(&run.path("model.pgen"), &trained.handle).context("writing model.pgen")?;
    let rows: Vec<Vec<String>> = trained
        .loss_curve
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), l.to_string()])
        .collect();
    report::write_csv(&run.path("loss_curve.csv"), &["step", "loss"], &rows)?;
    Ok(())
}

fn gen(cfg: &RunConfig, run: &mut Run, workers: usize) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let samples = runner::par_map(workers, cfg.gen.count, |i| {
        let seed = candidate_seed(cfg.seed, i);
        let zeta = scheduler::base_noise(&model, seed);
        scheduler::sample(&model, &zeta, &cfg.condition, &cfg.sampler)
    })?;
    let mut rows = Vec::with_capacity(samples.len());
    for (i, x) in samples.iter().enumerate() {
        let name = format!("sample_{i:03}.lvid");
        write_lvid(&run.path(&name), x).with_context(|| format!("writing {name}"))?;
        rows.push(vec![i.to_string(), candidate_seed(cfg.seed, i).to_string(), name]);
    }
    report::write_csv(&run.path("samples.csv"), &["index", "seed", "file"], &rows)?;
    Ok(())
}

fn score(cfg: &RunConfig, run: &mut Run, input: &Path) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    run.inputs.push(input.to_path_buf());
    let x = read_lvid(input).with_context(|| format!("reading {}", input.display()))?;
    let s = scoring::score(&model, &x, &cfg.condition, &cfg.score, cfg.seed)?;
    println!("{}", serde_json::to_string(&s).context("serializing score")?);
    report::write_json(&run.path("score.json"), &s)?;
    Ok(())
}

fn search(cfg: &RunConfig, run: &mut Run, workers: usize) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let pcfg = PoolConfig {
        candidates: cfg.search.candidates,
        sampler: cfg.sampler,
        score: cfg.score.clone(),
        variant: cfg.search.variant,
    };
    let pool = runner::generate_pool_par(&model, &cfg.condition, &pcfg, cfg.seed, workers)?;
    let best = select_best(&pool)?;
    report::write_json(&run.path("pool.json"), &pool.summary(best))?;
    write_lvid(&run.path("best.lvid"), &pool.candidates()[best].latent).context("writing best.lvid")?;
    let rows: Vec<Vec<String>> = pool
        .candidates()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                i.to_string(),
                c.seed.to_string(),
                c.score.s_global.to_string(),
                c.score.s_motion.to_string(),
                c.score.s_hybrid.to_string(),
                (i == best).to_string(),
            ]
        })
        .collect();
    report::write_csv(
        &run.path("candidates.csv"),
        &["index", "seed", "s_global", "s_motion", "s_hybrid", "selected"],
        &rows,
    )?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RefineSummary {
    condition_id: String,
    iterations: usize,
    best_iteration: usize,
    initial_score: f64,
    best_score: f64,
    final_mu: Vec<f64>,
    final_log_sigma: Vec<f64>,
}

fn refine(cfg: &RunConfig, run: &mut Run) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let trace = match proprio_core::refinement::refine(&model, &cfg.condition, cfg.seed, &cfg.refine, &cfg.score) {
        Ok(t) => t,
        Err(CoreError::RefineAborted { iteration, iterates }) => {
            report::write_jsonl(&run.path("trace.jsonl"), &iterates)?;
            return Err(Failure::Runtime(anyhow!(CoreError::RefineAborted { iteration, iterates })));
        }
        Err(e) => return Err(e.into()),
    };
    report::write_jsonl(&run.path("trace.jsonl"), &trace.iterates)?;
    write_lvid(&run.path("best.lvid"), &trace.best_latent).context("writing best.lvid")?;
    write_lvid(&run.path("mask.lvid"), &trace.mask.as_latent()).context("writing mask.lvid")?;
    let summary = RefineSummary {
        condition_id: cfg.condition.id(),
        iterations: trace.iterates.len(),
        best_iteration: trace.best_iteration,
        initial_score: trace.initial_score(),
        best_score: trace.best_score(),
        final_mu: trace.final_mu.clone(),
        final_log_sigma: trace.final_log_sigma.clone(),
    };
    report::write_json(&run.path("summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct KindRate {
    corruption: CorruptionKind,
    preference_rate: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DiagnosticSummary {
    pairs: usize,
    preferred_plausible: usize,
    preference_rate: f64,
    mean_plausible_score: f64,
    mean_corrupted_score: f64,
    by_corruption: Vec<KindRate>,
}

impl DiagnosticSummary {
    fn new(r: &DiagnosticResult) -> Self {
        Self {
            pairs: r.pairs,
            preferred_plausible: r.preferred_plausible,
            preference_rate: r.preference_rate,
            mean_plausible_score: r.mean_plausible(),
            mean_corrupted_score: r.mean_corrupted(),
            by_corruption: CorruptionKind::ALL
                .iter()
                .filter_map(|&k| {
                    r.rate_for(k).map(|rate| KindRate {
                        corruption: k,
                        preference_rate: rate,
                    })
                })
                .collect(),
        }
    }
}

fn diagnose(cfg: &RunConfig, run: &mut Run, workers: usize) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let pairs = make_pairs(cfg.dims, cfg.benchmark.pairs, cfg.seed)?;
    let result = runner::diagnostic_par(&model, &pairs, &cfg.score, cfg.seed, workers)?;
    report::write_json(&run.path("diagnostic.json"), &DiagnosticSummary::new(&result))?;
    report::write_jsonl(&run.path("pairs.jsonl"), &result.per_pair)?;
    Ok(())
}

fn ablate_noise(cfg: &RunConfig, run: &mut Run, workers: usize) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let pairs = make_pairs(cfg.dims, cfg.benchmark.pairs, cfg.seed)?;
    let rows = runner::noise_ablation_par(&model, &pairs, &cfg.score, &cfg.benchmark.ranges, cfg.seed, workers)?;
    let table: Vec<_> = rows.iter().map(|(r, _)| r.clone()).collect();
    report::write_csv(&run.path("noise_ablation.csv"), &report::ABLATION_HEADER, &report::ablation_rows(&table))?;
    Ok(())
}

fn ablate_variance(cfg: &RunConfig, run: &mut Run, workers: usize) -> Result<(), Failure> {
    let model = load_generator(cfg, run)?;
    let pairs = make_pairs(cfg.dims, cfg.benchmark.pairs, cfg.seed)?;
    let rows = runner::variance_ablation_par(&model, &pairs, &cfg.score, cfg.seed, workers)?;
    let table: Vec<_> = rows.iter().map(|(r, _)| r.clone()).collect();
    let mut header = report::ABLATION_HEADER;
    header[0] = "variant";
    report::write_csv(&run.path("variance_ablation.csv"), &header, &report::ablation_rows(&table))?;
    Ok(())
}
