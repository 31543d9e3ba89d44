//! Run manifests: every subcommand drops a JSON record of what it did next to
//! its outputs, so any artifact can be traced back to the exact configuration
//! and seed that produced it.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use headfield_core::error::{Error, Result};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// The fully resolved configuration (defaults filled in).
    pub config: serde_json::Value,
    /// SHA-256 of the serialized `config`; two runs with equal hashes and
    /// seeds produce identical outputs.
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
}

/// Tracks one subcommand invocation from start to manifest.
pub struct RunRecorder {
    subcommand: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl RunRecorder {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> RunRecorder {
        RunRecorder {
            subcommand: subcommand.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: impl AsRef<Path>) {
        self.inputs.push(path.as_ref().display().to_string());
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    /// Finalizes and writes the manifest.
    pub fn write(self, path: impl AsRef<Path>) -> Result<()> {
        let config_text = serde_json::to_string(&self.config).map_err(Error::Json)?;
        let digest = Sha256::digest(config_text.as_bytes());
        let config_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let manifest = RunManifest {
            subcommand: self.subcommand,
            inputs: self.inputs,
            outputs: self.outputs,
            config: self.config,
            config_hash,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(Error::Json)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
