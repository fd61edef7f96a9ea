use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kband::harness::output::write_experiment;
use kband::harness::sweep::write_sweep_csv;
use kband::harness::{run_experiment, sweep, ExperimentConfig, SweepParam};
use kband::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_REPLICATION: u8 = 3;

#[derive(Parser)]
#[command(name = "kband", version, about = "Kernelized bandits with distributed biased feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for per-seed CSV/JSON files and aggregates.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Repeat an experiment over values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, epsilon, C or lengthscale.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load(path: &Path, seeds: Option<Vec<u64>>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seeds {
        cfg.run.seeds = Some(kband::harness::config::SeedSpec::List(s));
        cfg.validate()?;
    }
    Ok(cfg)
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("kband: {e}");
    if e.is_config_error() {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_REPLICATION)
    }
}

fn run(config: &Path, out: Option<&Path>, seeds: Option<Vec<u64>>) -> Result<bool, Error> {
    let cfg = load(config, seeds)?;
    let result = run_experiment(&cfg)?;
    if let Some(dir) = out {
        write_experiment(dir, &result)?;
    }
    println!("{}", serde_json::to_string_pretty(&result.aggregate)?);
    for f in &result.aggregate.failed {
        eprintln!("kband: seed {} failed: {}", f.seed, f.error);
    }
    Ok(!result.any_failed())
}

fn run_sweep(
    config: &Path,
    param: &str,
    values: &[f64],
    out: Option<&Path>,
    seeds: Option<Vec<u64>>,
) -> Result<bool, Error> {
    let cfg = load(config, seeds)?;
    let param: SweepParam = param.parse()?;
    let results = sweep(&cfg, param, values)?;
    let rows: Vec<_> = results.iter().map(|(row, _)| row.clone()).collect();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (i, (_, r)) in results.iter().enumerate() {
            write_experiment(&dir.join(format!("value_{i}")), r)?;
        }
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(rows.iter().all(|r| r.failed == 0))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, out, seeds } => run(&config, out.as_deref(), seeds),
        Command::Sweep {
            config,
            param,
            values,
            out,
            seeds,
        } => run_sweep(&config, &param, &values, out.as_deref(), seeds),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_REPLICATION),
        Err(e) => fail(&e),
    }
}
