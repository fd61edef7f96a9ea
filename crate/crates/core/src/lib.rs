//! Kernelized bandits with distributed, biased user feedback.
//!
//! The crate simulates a population of users whose local reward functions
//! are Gaussian-process perturbations of an unknown global function, and
//! runs phase-then-batch elimination (optionally differentially private)
//! and several baselines against it.

pub mod baselines;
pub mod dpbe;
pub mod environment;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod posterior;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
