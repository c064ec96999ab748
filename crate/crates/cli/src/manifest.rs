//! Run manifests: one JSON file per artifact-producing command, enough to
//! rerun it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use gapweight::digest_hex;
use serde::{Deserialize, Serialize};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Every configuration key with its resolved value.
    pub config: BTreeMap<String, String>,
    /// SHA-256 over the canonical `key=value` lines of `config`.
    pub config_digest: String,
    pub unsafe_tune_lambda: bool,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at_unix: f64,
    pub finished_at_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn file_digest(path: &Path) -> anyhow::Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: digest_hex(&bytes),
    })
}

pub fn manifest_path(out_dir: &Path, command: &str) -> PathBuf {
    out_dir.join(format!("{}_manifest.json", command.replace('-', "_")))
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: f64,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.to_string(),
            started: now_unix(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Writes `<out_dir>/<command>_manifest.json` and returns its path.
    pub fn finish(self, cfg: &Config, unsafe_tune_lambda: bool, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(out_dir, &self.command);
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.values().clone(),
            config_digest: digest_hex(cfg.canonical().as_bytes()),
            unsafe_tune_lambda,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at_unix: self.started,
            finished_at_unix: now_unix(),
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn load(path: &Path) -> anyhow::Result<RunManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
    Ok(manifest)
}
