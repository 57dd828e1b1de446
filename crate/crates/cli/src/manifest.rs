use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use gazeacc::dataio::sha256_hex;
use serde::Serialize;

use crate::Failure;

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub threads: usize,
    /// Every parameter the run used, after merging config file and flags.
    pub effective_config: serde_json::Value,
    /// SHA-256 of the compact JSON encoding of `effective_config`.
    pub config_digest: String,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the output location) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    command: String,
    started: Instant,
    effective_config: serde_json::Value,
    inputs: BTreeMap<String, String>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self, Failure> {
        Ok(Self {
            command: command.to_string(),
            started: Instant::now(),
            effective_config: serde_json::to_value(config)
                .map_err(|e| Failure::Usage(e.to_string()))?,
            inputs: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path, digest: &str) {
        self.inputs
            .insert(path.display().to_string(), digest.to_string());
    }

    pub fn finish(self, outputs: BTreeMap<String, String>) -> RunManifest {
        let config_digest = sha256_hex(self.effective_config.to_string().as_bytes());
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            threads: rayon::current_num_threads(),
            effective_config: self.effective_config,
            config_digest,
            inputs: self.inputs,
            outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut json = serde_json::to_vec_pretty(self).map_err(|e| Failure::Data(e.to_string()))?;
        json.push(b'\n');
        std::fs::write(path, json)
            .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
    }
}
