use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// sha256 of the effective configuration as canonical JSON.
    pub config_hash: String,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        let config_hash = hex::encode(Sha256::digest(config.to_string().as_bytes()));
        Self {
            command: command.to_string(),
            config_hash,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            tool_version: format!("worldsmith {}", env!("CARGO_PKG_VERSION")),
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    /// Writes the manifest, listing `outputs` (relative to `dir`) in sorted order.
    pub fn write(mut self, dir: &Path, outputs: &[&str]) -> io::Result<()> {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self.outputs.sort();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(FILE), serde_json::to_string_pretty(&self)? + "\n")
    }
}
