//! Seeded replications, run in parallel and merged in seed order.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AlgorithmName, ExperimentConfig, FunctionConfig};
use crate::baselines::{run_bpe, run_dpbe_fixed, run_dpbe_nobatching, run_gp_ucb, SingleUserConfig};
use crate::dpbe::{run_dpbe, DpbeConfig};
use crate::environment::{GlobalFunction, Instance};
use crate::error::{Error, Result};
use crate::kernels::{DecisionSet, InfoGainEstimator, Kernel};
use crate::metrics::RunMetrics;
use crate::privacy::{PrivacyModel, Privatizer};
use crate::rng::{stream, RunRngs, Stream};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "KBAND_THREADS";

/// Pieces of the configuration that are loaded once and shared by all
/// replications.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub kernel: Kernel,
    pub privatizer: Privatizer,
    tabular: Option<Arc<GlobalFunction>>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = cfg.environment.kernel.build(cfg.base_dir.as_deref())?;
        let tabular = match &cfg.environment.function {
            FunctionConfig::Tabular { values_path } => {
                let f = GlobalFunction::tabular_from_csv(&cfg.resolve(values_path))?;
                let GlobalFunction::Tabular { values } = &f else {
                    unreachable!()
                };
                DecisionSet::indexed(values.len())?.check_kernel(&kernel)?;
                Some(Arc::new(f))
            }
            _ => None,
        };
        Ok(Prepared {
            cfg: cfg.clone(),
            kernel,
            privatizer: cfg.privacy.privatizer()?,
            tabular,
        })
    }

    /// The world of replication `seed`.
    pub fn instance(&self, seed: u64) -> Result<Instance> {
        let env = &self.cfg.environment;
        let (set, f) = match (&env.function, &self.tabular) {
            (FunctionConfig::Tabular { .. }, Some(f)) => {
                let GlobalFunction::Tabular { values } = f.as_ref() else {
                    unreachable!()
                };
                (DecisionSet::indexed(values.len())?, f.as_ref().clone())
            }
            (FunctionConfig::Synthetic, _) => {
                let (d, n) = self.dims()?;
                let set = DecisionSet::uniform(n, d, &mut stream(seed, Stream::DecisionSet))?;
                let f = GlobalFunction::make_synthetic(d, self.kernel.clone(), &mut stream(seed, Stream::Function))?;
                (set, f)
            }
            (FunctionConfig::Benchmark { name }, _) => {
                let (d, n) = self.dims()?;
                let set = DecisionSet::uniform(n, d, &mut stream(seed, Stream::DecisionSet))?;
                let f = GlobalFunction::benchmark(*name, &set)?;
                (set, f)
            }
            (FunctionConfig::Tabular { .. }, None) => return Err(Error::Config("tabular values not loaded".into())),
        };
        let mut inst = Instance::new(set, self.kernel.clone(), &f, env.v_sq, env.sigma_sq)?;
        if let Some(b) = self.cfg.algorithm.rkhs_norm {
            inst.rkhs_norm = b;
        }
        Ok(inst)
    }

    fn dims(&self) -> Result<(usize, usize)> {
        let env = &self.cfg.environment;
        match (env.dim, env.num_points) {
            (Some(d), Some(n)) => Ok((d, n)),
            _ => Err(Error::Config("environment.dim and environment.num_points are required".into())),
        }
    }

    fn dpbe_config(&self, inst: &Instance) -> Result<DpbeConfig> {
        let alg = &self.cfg.algorithm;
        let horizon = self.cfg.run.horizon;
        let mut cfg = DpbeConfig::for_instance_with_lambda(inst, alg.alpha, alg.c, horizon, alg.lambda)?;
        if let Some(b) = alg.beta {
            cfg.beta = b;
        }
        let needs_gamma = self.privatizer.model() != PrivacyModel::None && alg.gamma_t.is_none();
        if let Some(g) = alg.gamma_t {
            cfg.gamma_t = g;
        }
        if needs_gamma || alg.diagnostics {
            let est = InfoGainEstimator::new(&inst.kernel, &inst.set, cfg.lambda)?.with_budget(horizon as usize);
            let curve = est.curve(horizon as usize)?;
            cfg.gamma_t = alg.gamma_t.unwrap_or(curve[horizon as usize]);
            if alg.diagnostics {
                cfg.diagnostics = Some(Arc::new(curve));
            }
        }
        Ok(cfg)
    }

    fn single_user_config(&self, inst: &Instance) -> Result<SingleUserConfig> {
        let alg = &self.cfg.algorithm;
        let mut cfg = SingleUserConfig::for_instance_with_lambda(inst, self.cfg.run.horizon, alg.lambda)?;
        if let Some(b) = alg.beta {
            cfg.beta = b;
        }
        Ok(cfg)
    }

    /// Runs one replication; the wall clock covers the algorithm only.
    pub fn replicate(&self, seed: u64) -> Result<RunMetrics> {
        let mut inst = self.instance(seed)?;
        let mut rngs = RunRngs::new(seed);
        match self.cfg.algorithm.name {
            AlgorithmName::Dpbe | AlgorithmName::DpDpbe => {
                let cfg = self.dpbe_config(&inst)?;
                Ok(run_dpbe(&cfg, &mut inst, &self.privatizer, &mut rngs, seed)?.metrics)
            }
            AlgorithmName::DpbeFixed => {
                let cfg = self.dpbe_config(&inst)?;
                let mut ref_inst = inst.clone();
                let reference = run_dpbe(&cfg, &mut ref_inst, &Privatizer::None, &mut RunRngs::new(seed), seed)?;
                Ok(run_dpbe_fixed(&cfg, &mut inst, &reference.metrics, &mut rngs, seed)?.metrics)
            }
            AlgorithmName::DpbeNobatching => {
                let cfg = self.dpbe_config(&inst)?;
                run_dpbe_nobatching(&cfg, &mut inst, &mut rngs, seed)
            }
            AlgorithmName::GpUcb => {
                let cfg = self.single_user_config(&inst)?;
                run_gp_ucb(&cfg, &mut inst, &mut rngs, seed)
            }
            AlgorithmName::Bpe => {
                let cfg = self.single_user_config(&inst)?;
                run_bpe(&cfg, &mut inst, &mut rngs, seed)
            }
        }
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone)]
pub struct Replication {
    pub seed: u64,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Cross-seed statistics over the successful replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub failed: Vec<FailedSeed>,
    pub final_regret: Stat,
    pub total_cost: Stat,
    pub wall_clock_secs: Stat,
    #[serde(skip)]
    pub cum_regret: Vec<Stat>,
}

impl Aggregate {
    pub fn from_replications(algorithm: &str, reps: &[Replication]) -> Self {
        let ok: Vec<&RunMetrics> = reps.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        let failed = reps
            .iter()
            .filter_map(|r| {
                r.outcome.as_ref().err().map(|e| FailedSeed {
                    seed: r.seed,
                    error: e.clone(),
                })
            })
            .collect();
        let horizon = ok.iter().map(|m| m.rounds.len()).min().unwrap_or(0);
        let mut column = vec![0.0; ok.len()];
        let cum_regret = (0..horizon)
            .map(|t| {
                for (c, m) in column.iter_mut().zip(&ok) {
                    *c = m.rounds[t].cum_regret;
                }
                Stat::of(&column)
            })
            .collect();
        let pick = |f: fn(&RunMetrics) -> f64| Stat::of(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
        Aggregate {
            algorithm: algorithm.to_string(),
            seeds: ok.iter().map(|m| m.seed).collect(),
            failed,
            final_regret: pick(|m| m.total_regret),
            total_cost: pick(|m| m.total_cost as f64),
            wall_clock_secs: pick(|m| m.wall_clock_secs),
            cum_regret,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub replications: Vec<Replication>,
    pub aggregate: Aggregate,
}

impl ExperimentResult {
    pub fn any_failed(&self) -> bool {
        !self.aggregate.failed.is_empty()
    }

    pub fn successes(&self) -> impl Iterator<Item = &RunMetrics> {
        self.replications.iter().filter_map(|r| r.outcome.as_ref().ok())
    }
}

/// Worker count: `run.parallelism` or the available cores, capped by
/// `KBAND_THREADS` when set.
pub fn thread_count(cfg: &ExperimentConfig) -> usize {
    let base = cfg
        .run
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// Runs every seed of the configuration. Configuration problems are
/// returned as errors; failures inside a replication are recorded per seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let prepared = Prepared::new(cfg)?;
    let seeds = cfg.run.seeds();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(cfg))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let replications: Vec<Replication> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| Replication {
                seed,
                outcome: prepared.replicate(seed).map_err(|e| e.to_string()),
            })
            .collect()
    });
    let aggregate = Aggregate::from_replications(cfg.algorithm.name.as_str(), &replications);
    Ok(ExperimentResult {
        replications,
        aggregate,
    })
}
