//! One-parameter sweeps.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::runner::{run_experiment, ExperimentResult};
use crate::error::{Error, Result};
use crate::kernels::KernelType;
use crate::privacy::PrivacyModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Epsilon,
    C,
    Lengthscale,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Epsilon => "epsilon",
            SweepParam::C => "C",
            SweepParam::Lengthscale => "lengthscale",
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "epsilon" => Ok(SweepParam::Epsilon),
            "C" | "c" => Ok(SweepParam::C),
            "lengthscale" => Ok(SweepParam::Lengthscale),
            other => Err(Error::Config(format!(
                "unsupported sweep parameter `{other}` (expected alpha, epsilon, C or lengthscale)"
            ))),
        }
    }
}

/// Copy of `cfg` with `param` set to `value`.
pub fn apply_param(cfg: &ExperimentConfig, param: SweepParam, value: f64) -> Result<ExperimentConfig> {
    let mut out = cfg.clone();
    match param {
        SweepParam::Alpha => out.algorithm.alpha = value,
        SweepParam::C => out.algorithm.c = value,
        SweepParam::Epsilon => {
            if out.privacy.model == PrivacyModel::None {
                return Err(Error::Config("epsilon sweep needs a privacy model".into()));
            }
            out.privacy.epsilon = Some(value);
        }
        SweepParam::Lengthscale => {
            if !matches!(out.environment.kernel.kind, KernelType::Se | KernelType::Matern) {
                return Err(Error::Config("lengthscale sweep needs an se or matern kernel".into()));
            }
            out.environment.kernel.lengthscale = Some(value);
        }
    }
    out.validate()?;
    Ok(out)
}

/// One aggregate row per swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub mean_cost: f64,
    pub mean_wall_clock_secs: f64,
    pub failed: usize,
}

impl SweepRow {
    fn new(param: SweepParam, value: f64, r: &ExperimentResult) -> Self {
        let a = &r.aggregate;
        SweepRow {
            param: param.as_str().to_string(),
            value,
            mean_final_regret: a.final_regret.mean,
            std_final_regret: a.final_regret.std,
            mean_cost: a.total_cost.mean,
            mean_wall_clock_secs: a.wall_clock_secs.mean,
            failed: a.failed.len(),
        }
    }
}

/// Runs the experiment once per value. All values are validated before
/// anything runs.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<(SweepRow, ExperimentResult)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let cfgs = values
        .iter()
        .map(|&v| apply_param(cfg, param, v))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(values.len());
    for (c, &v) in cfgs.iter().zip(values) {
        let r = run_experiment(c)?;
        out.push((SweepRow::new(param, v, &r), r));
    }
    Ok(out)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    for r in rows {
        w.serialize(r).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
