//! Experiment orchestration: configuration, seeded replications, output
//! files and parameter sweeps.

pub mod config;
pub mod output;
pub mod runner;
pub mod sweep;

pub use config::{AlgorithmName, ExperimentConfig};
pub use runner::{run_experiment, Aggregate, ExperimentResult, Prepared, Replication, Stat};
pub use sweep::{sweep, SweepParam, SweepRow};
