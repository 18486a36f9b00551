//! JSON run configuration.
//!
//! Every section has defaults, unknown keys are rejected, and parse errors
//! name the offending key path. The configuration hash is the SHA-256 of the
//! resolved configuration serialized with sorted keys and no whitespace.

use std::path::{Path, PathBuf};

use proprio_core::benchmark::NoiseRange;
use proprio_core::generator::{Condition, ConditionSpec, Nonlinearity, TinyNetArch, TrainConfig};
use proprio_core::refinement::RefineConfig;
use proprio_core::scheduler::SamplerConfig;
use proprio_core::scoring::{ScoreConfig, ScoreVariant};
use proprio_core::LatentDims;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the frozen generator comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSource {
    /// Gaussian data law `N(mean, scale²)` over `dims`.
    AnalyticGaussian { mean: f64, scale: f64 },
    /// A `PGEN` checkpoint written by `train-gen`.
    Checkpoint { path: PathBuf },
}

impl Default for GeneratorSource {
    fn default() -> Self {
        GeneratorSource::AnalyticGaussian { mean: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub time_frequencies: usize,
    pub cond_width: usize,
    pub nonlinearity: Nonlinearity,
    pub condition: ConditionSpec,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let a = TinyNetArch::new(
            LatentDims::default(),
            ConditionSpec::ClassId {
                num_classes: proprio_core::benchmark::NUM_CLASSES as usize,
            },
        );
        Self {
            hidden: a.hidden,
            time_frequencies: a.time_frequencies,
            cond_width: a.cond_width,
            nonlinearity: a.nonlinearity,
            condition: a.condition,
        }
    }
}

impl ArchConfig {
    pub fn to_arch(&self, dims: LatentDims) -> TinyNetArch {
        TinyNetArch {
            dims,
            hidden: self.hidden.clone(),
            time_frequencies: self.time_frequencies,
            cond_width: self.cond_width,
            nonlinearity: self.nonlinearity,
            condition: self.condition,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct GenConfig {
    /// Number of samples written by `gen`.
    pub count: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SearchConfig {
    pub candidates: usize,
    pub variant: ScoreVariant,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            candidates: 16,
            variant: ScoreVariant::Motion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct BenchmarkConfig {
    /// Diagnostic pairs for `diagnose` and the ablations.
    pub pairs: usize,
    /// Ranges compared by `ablate-noise`.
    pub ranges: Vec<NoiseRange>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            pairs: 100,
            ranges: NoiseRange::default_pair(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct RunConfig {
    pub seed: u64,
    pub dims: LatentDims,
    pub generator: GeneratorSource,
    pub condition: Condition,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub score: ScoreConfig,
    pub gen: GenConfig,
    pub search: SearchConfig,
    pub refine: RefineConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dims: LatentDims::default(),
            generator: GeneratorSource::default(),
            condition: Condition::ClassId(0),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            score: ScoreConfig::default(),
            gen: GenConfig::default(),
            search: SearchConfig::default(),
            refine: RefineConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: proprio_core::Error| ConfigError::Invalid(e.to_string());
        if self.dims.is_empty() {
            return Err(ConfigError::Invalid("dims must be positive".into()));
        }
        self.score.validate().map_err(invalid)?;
        self.refine.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.arch.to_arch(self.dims).validate().map_err(invalid)?;
        if self.sampler.steps == 0 {
            return Err(ConfigError::Invalid("sampler.steps must be at least 1".into()));
        }
        if self.search.candidates == 0 || self.gen.count == 0 || self.benchmark.pairs == 0 {
            return Err(ConfigError::Invalid("counts must be positive".into()));
        }
        if let GeneratorSource::AnalyticGaussian { scale, .. } = self.generator {
            if scale.is_nan() || scale <= 0.0 {
                return Err(ConfigError::Invalid("generator.scale must be positive".into()));
            }
        }
        Ok(())
    }

    /// Sorted-key, whitespace-free JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

/// Serialize `v` with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    fn sorted(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), sorted(&m[k]));
                }
                serde_json::Value::Object(out)
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(v)).expect("value serializes")
}
