//! CSV emission and run manifests.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use crate::error::Result;
use crate::experiments::config::ExperimentConfig;
use crate::experiments::rng::RNG_NAME;

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub git_hash: String,
    pub rng: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
}

/// `git rev-parse HEAD` of the working directory, or `"unknown"`.
pub fn git_hash() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

pub fn write_manifest(dir: &Path, config: &ExperimentConfig, files: &[PathBuf]) -> Result<PathBuf> {
    let manifest = Manifest {
        experiment: serde_json::to_value(config.experiment)?
            .as_str()
            .unwrap_or_default()
            .to_string(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_hash: git_hash(),
        rng: RNG_NAME.into(),
        seed: config.seed,
        config: config.clone(),
        files: files
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Writes `header` and `rows` to `dir/name`.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_writer(File::create(&path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path)
}

/// Shortest round-trip decimal form; deterministic across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}
