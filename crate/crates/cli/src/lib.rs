//! Experiment harness: configuration, the subcommand implementations and
//! run reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod selftest;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Sizes the global worker pool from `ENVDIFF_WORKERS` when set.
pub fn init_workers() -> Result<usize> {
    let n = match std::env::var("ENVDIFF_WORKERS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("ENVDIFF_WORKERS must be a positive integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(rayon::current_num_threads())
}
