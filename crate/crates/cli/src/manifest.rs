//! Run manifests: every command that writes artifacts also records what it
//! ran, with what inputs, and which files it produced.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Hash over every input that affects results.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
    pub unix_time: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: Vec<u64>) -> Self {
        let config_hash = hex::encode(Sha256::digest(config.to_string().as_bytes()));
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            config,
            seeds,
            wall_seconds: 0.0,
            outputs: vec![],
            unix_time: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
