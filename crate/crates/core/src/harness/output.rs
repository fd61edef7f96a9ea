//! CSV and JSON emission.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::runner::{Aggregate, ExperimentResult};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;

pub const ROUNDS_HEADER: [&str; 4] = ["round", "action", "inst_regret", "cum_regret"];
pub const PHASES_HEADER: [&str; 8] = ["phase", "T_l", "U_l", "H_l", "actions", "active", "cost", "sigma_n"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// `rounds.csv`, `phases.csv` and `summary.json` of one replication.
pub fn write_replication(dir: &Path, m: &RunMetrics) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(
        &dir.join("rounds.csv"),
        &ROUNDS_HEADER,
        m.rounds.iter().map(|r| {
            vec![
                r.round.to_string(),
                r.action.to_string(),
                r.inst_regret.to_string(),
                r.cum_regret.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("phases.csv"),
        &PHASES_HEADER,
        m.phases.iter().map(|p| {
            vec![
                p.phase.to_string(),
                p.t_l.to_string(),
                p.users.to_string(),
                p.batches.to_string(),
                p.actions.to_string(),
                p.active.to_string(),
                p.cost.to_string(),
                p.sigma_n.to_string(),
            ]
        }),
    )?;
    write_json(&dir.join("summary.json"), &m.summary())
}

/// `aggregate.csv` (per-round mean and std of cumulative regret) and
/// `aggregate.json`.
pub fn write_aggregate(dir: &Path, agg: &Aggregate) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_rows(
        &dir.join("aggregate.csv"),
        &["round", "mean_cum_regret", "std_cum_regret"],
        agg.cum_regret
            .iter()
            .enumerate()
            .map(|(t, s)| vec![(t + 1).to_string(), s.mean.to_string(), s.std.to_string()]),
    )?;
    write_json(&dir.join("aggregate.json"), agg)
}

/// Everything: one `seed_<s>/` directory per successful replication plus
/// the aggregate files.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    for m in result.successes() {
        write_replication(&dir.join(format!("seed_{}", m.seed)), m)?;
    }
    write_aggregate(dir, &result.aggregate)
}
