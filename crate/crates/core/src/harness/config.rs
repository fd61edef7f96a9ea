//! Experiment configuration (JSON, schema version 1).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::Benchmark;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::privacy::{PrivacyBudget, PrivacyModel, Privatizer};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED_COUNT: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub environment: EnvironmentConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    pub run: RunConfig,
    /// Directory that relative paths resolve against; set by the loader.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub function: FunctionConfig,
    /// Dimension of the unit cube; ignored by tabular functions.
    #[serde(default)]
    pub dim: Option<usize>,
    /// `|D|`; ignored by tabular functions.
    #[serde(default)]
    pub num_points: Option<usize>,
    pub kernel: KernelSpec,
    pub v_sq: f64,
    pub sigma_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionConfig {
    /// RKHS function with `30d` random centers.
    Synthetic,
    Benchmark { name: Benchmark },
    /// `(index, value)` CSV over the indexed decision set `[0], [1], …`.
    Tabular { values_path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Dpbe,
    DpDpbe,
    GpUcb,
    Bpe,
    DpbeFixed,
    DpbeNobatching,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Dpbe => "dpbe",
            AlgorithmName::DpDpbe => "dp_dpbe",
            AlgorithmName::GpUcb => "gp_ucb",
            AlgorithmName::Bpe => "bpe",
            AlgorithmName::DpbeFixed => "dpbe_fixed",
            AlgorithmName::DpbeNobatching => "dpbe_nobatching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmName,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Defaults to `1/(|D|T)`.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Defaults to `σ²` (or `σ²/v²` when `v² ∉ {0, 1}`), and to `σ² + v²κ²`
    /// for GP-UCB and BPE.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Defaults to the function's own bound.
    #[serde(default)]
    pub rkhs_norm: Option<f64>,
    /// Overrides the greedy information-gain estimate used by privatizers.
    #[serde(default, rename = "gamma_T")]
    pub gamma_t: Option<f64>,
    /// Log violations of the batch-count and variance bounds.
    #[serde(default)]
    pub diagnostics: bool,
}

fn default_alpha() -> f64 {
    0.7
}

fn default_c() -> f64 {
    1.6
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    #[serde(default)]
    pub model: PrivacyModel,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub delta1: Option<f64>,
    #[serde(default)]
    pub delta2: Option<f64>,
}

impl PrivacyConfig {
    pub fn privatizer(&self) -> Result<Privatizer> {
        if self.model == PrivacyModel::None {
            return Ok(Privatizer::None);
        }
        let (Some(eps), Some(delta)) = (self.epsilon, self.delta) else {
            return Err(Error::Config("privacy model needs epsilon and delta".into()));
        };
        Privatizer::from_model(self.model, Some(PrivacyBudget::new(eps, delta, self.delta1, self.delta2)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: u64,
    /// A list of seeds, or a count `n` meaning `0..n`.
    #[serde(default)]
    pub seeds: Option<SeedSpec>,
    /// Worker threads; defaults to the available cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

impl RunConfig {
    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .as_ref()
            .map_or_else(|| (0..DEFAULT_SEED_COUNT).collect(), SeedSpec::seeds)
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_json_str_in(text, None)
    }

    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_json_str_in(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str_in(&text, path.parent())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Resolves a config-relative path.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        match &self.base_dir {
            Some(b) if Path::new(rel).is_relative() => b.join(rel),
            _ => PathBuf::from(rel),
        }
    }

    /// Checks everything that does not need the decision set.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.version != SCHEMA_VERSION {
            return bad(format!("unsupported config version {} (expected {SCHEMA_VERSION})", self.version));
        }
        let env = &self.environment;
        if !matches!(env.function, FunctionConfig::Tabular { .. }) {
            match (env.dim, env.num_points) {
                (Some(d), Some(n)) if d >= 1 && n >= 1 => {}
                _ => return bad("environment.dim and environment.num_points must be >= 1".into()),
            }
        }
        if let (FunctionConfig::Benchmark { name }, Some(d)) = (&env.function, env.dim) {
            name.check_dim(d)?;
        }
        if !(env.v_sq >= 0.0 && env.v_sq.is_finite()) {
            return bad("environment.v_sq must be nonnegative".into());
        }
        if !(env.sigma_sq >= 0.0 && env.sigma_sq.is_finite()) {
            return bad("environment.sigma_sq must be nonnegative".into());
        }
        if self.run.horizon == 0 {
            return bad("run.horizon must be >= 1".into());
        }
        if self.run.seeds().is_empty() {
            return bad("run.seeds must not be empty".into());
        }
        if self.run.parallelism == Some(0) {
            return bad("run.parallelism must be >= 1".into());
        }
        let alg = &self.algorithm;
        if !(alg.alpha > 0.0) {
            return bad("algorithm.alpha must be positive".into());
        }
        if !(alg.c > 1.0) {
            return bad("algorithm.c must exceed 1".into());
        }
        if let Some(b) = alg.beta {
            if !(b > 0.0 && b < 1.0) {
                return bad("algorithm.beta must lie in (0, 1)".into());
            }
        }
        if let Some(l) = alg.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad("algorithm.lambda must be positive".into());
            }
        }
        if let Some(g) = alg.gamma_t {
            if !(g >= 0.0 && g.is_finite()) {
                return bad("algorithm.gamma_T must be nonnegative".into());
            }
        }
        let private = self.privacy.model != PrivacyModel::None;
        match (alg.name, private) {
            (AlgorithmName::DpDpbe, false) => {
                return bad("dp_dpbe needs a privacy model other than none".into());
            }
            (AlgorithmName::DpDpbe, true) => {}
            (name, true) => {
                return bad(format!("{} runs without privacy; use dp_dpbe", name.as_str()));
            }
            _ => {}
        }
        if alg.name == AlgorithmName::Bpe && self.run.horizon < 4 {
            return bad("bpe needs run.horizon >= 4".into());
        }
        self.privacy.privatizer()?;
        self.environment.kernel.build(self.base_dir.as_deref()).map(|_| ())
    }
}
