//! Experiment harness: TOML configs, EM and ML-EM sweeps against
//! shared-noise references, scaling-exponent fits and CSV output.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod fit;
pub mod output;
pub mod tasks;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunMode};
pub use fit::{fit_gamma, GammaFit};
pub use output::{write_results, ResultRow};
