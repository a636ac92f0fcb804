use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use afl_core::orchestrator::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config_file::to_text;

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    /// SHA-256 of the canonical config text.
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fractions: Vec<f64>,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(to_text(cfg).as_bytes()))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, out: &Path, seeds: Vec<u64>, started: f64) -> Self {
        Self {
            command: command.into(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            output_dir: out.to_path_buf(),
            started_unix: started,
            finished_unix: now_unix(),
            seeds,
            fractions: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join("manifest.json"), text + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_every_field() {
        let base = ExperimentConfig::regression_table();
        let h = config_hash(&base);
        assert_eq!(h, config_hash(&base.clone()));
        assert_eq!(h.len(), 64);
        let variants = [
            ExperimentConfig { rounds: 401, ..base.clone() },
            ExperimentConfig { gamma0: 0.0011, ..base.clone() },
            ExperimentConfig { seed: 1, ..base.clone() },
            ExperimentConfig { data_seed: Some(0), ..base.clone() },
            ExperimentConfig { record_iterates: true, ..base.clone() },
            ExperimentConfig { powers: Some(vec![1.0; 10]), ..base.clone() },
        ];
        for v in variants {
            assert_ne!(config_hash(&v), h);
        }
    }
}
