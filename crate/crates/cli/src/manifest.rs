//! Run manifests: every output directory gets exactly one `manifest.json`
//! recording the command, the effective configuration, seeds, input hashes,
//! the tool version, and the produced files. Reruns with identical manifest
//! inputs reproduce the CSV outputs bit-for-bit.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: serde_json::Value,
    /// Effective fit configuration after flag/file/default precedence.
    pub config: serde_json::Value,
    pub seed: u64,
    /// sha256 of every input file, keyed by path as given.
    pub input_hashes: std::collections::BTreeMap<String, String>,
    pub version: String,
    pub created_at: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: serde_json::Value, config: serde_json::Value, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config,
            seed,
            input_hashes: Default::default(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: chrono::Utc::now().to_rfc3339(),
            outputs: Vec::new(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        self.input_hashes
            .insert(path.display().to_string(), format!("{digest:x}"));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
