//! JSON run reports with the resolved configuration and an input content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// SHA-256 over the configuration and the bytes of every input file, in order.
pub fn content_hash(cfg: &ExperimentConfig, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).map_err(|e| CliError::Data(e.to_string()))?);
    for p in inputs {
        let bytes = fs::read(p).map_err(|e| CliError::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a ExperimentConfig,
    pub inputs: &'a [PathBuf],
    pub inputs_sha256: String,
    pub result: T,
}

pub fn write_report<T: Serialize>(
    path: &Path,
    command: &str,
    cfg: &ExperimentConfig,
    inputs: &[PathBuf],
    result: T,
) -> Result<()> {
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        inputs,
        inputs_sha256: content_hash(cfg, inputs)?,
        result,
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
