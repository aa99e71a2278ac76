//! Experiment runner for contamination-attack sweeps.
//!
//! A TOML [`config::ExperimentConfig`] describes the data, the attack sweep
//! (contamination fractions and attacker-party counts), the model and an
//! optional defense. [`runner::run`] executes every scenario and repetition
//! and [`results::emit`] writes the result files.

pub mod config;
pub mod results;
pub mod runner;

use std::path::{Path, PathBuf};

use anyhow::Result;

pub use config::ExperimentConfig;
pub use results::{emit, OutputFiles, ResultRow};
pub use runner::run;

/// Runs `cfg` and writes its outputs to `out` (or the configured directory).
pub fn run_and_emit(cfg: &ExperimentConfig, out: Option<&Path>, jobs: usize) -> Result<OutputFiles> {
    let rows = run(cfg, jobs)?;
    let dir: PathBuf = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone());
    emit(cfg, &runner::scenarios(cfg), &rows, &dir)
}
