use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Written next to every output. Together with the hashed inputs the
/// resolved config and seed reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input path to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub duration_s: f64,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed: None,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                duration_s: 0.0,
            },
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.manifest.config = serde_json::to_value(config).expect("config serializes");
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest
            .inputs
            .insert(path.display().to_string(), hex::encode(Sha256::digest(bytes)));
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn write(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(path, text).map_err(|e| CliError::input(path.display(), e))?;
        Ok(self.manifest)
    }
}

/// `<file>.manifest.json` for single-file outputs.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}
