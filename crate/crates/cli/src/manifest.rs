//! manifest.json: what was run, with which seeds, where.
//!
//! The embedded config is the effective one (command-line overrides
//! applied), so `kpl run manifest.json` repeats the run exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub available_parallelism: usize,
    pub optimized: bool,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            available_parallelism: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            optimized: !cfg!(debug_assertions),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub wall_seconds: f64,
    /// Seed material: every random draw is keyed by the master seed, the
    /// replica id and a purpose tag.
    pub seeds: BTreeMap<String, u64>,
    pub environment: Environment,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, wall_seconds: f64) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master_seed".to_string(), config.master_seed);
        seeds.insert("first_replica".to_string(), 0);
        // The shear check draws its untilted ensemble from a second block of
        // replica ids.
        let blocks = if config.experiment == "shear_shift" { 2 } else { 1 };
        seeds.insert("replica_ids_end".to_string(), (blocks * config.replicas) as u64);
        seeds.insert("bootstrap_replica_id".to_string(), u64::MAX);
        Self {
            manifest_version: MANIFEST_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            wall_seconds,
            seeds,
            environment: Environment::current(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Reads either a config or a manifest and returns the config to run.
pub fn load_runnable(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    if value.get("manifest_version").is_some() {
        let manifest: RunManifest = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        manifest.config.validate()?;
        Ok(manifest.config)
    } else {
        ExperimentConfig::from_json(&text)
    }
}
