//! Run manifests: enough to reproduce an output directory.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration after defaults and flag overrides.
    pub effective_config: serde_json::Value,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub threads: usize,
    pub started_unix: u64,
    pub elapsed_secs: f64,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects inputs and outputs as a command runs, then writes the manifest.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: SystemTime,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Recorder {
            command: command.into(),
            out_dir: out_dir.to_path_buf(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: SystemTime::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config<S: Serialize>(&mut self, config: &S) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path of an output file inside the run directory, registered for hashing.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn finish(self, exit_code: i32) -> Result<()> {
        let canonical = serde_json::to_vec(&self.config)?;
        let digests = |v: &[PathBuf]| {
            v.iter()
                .filter(|p| p.exists())
                .map(|p| digest_file(p))
                .collect::<Result<Vec<_>>>()
        };
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().skip(1).collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.seed,
            effective_config: self.config,
            config_sha256: sha256_hex(&canonical),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            threads: rayon::current_num_threads(),
            started_unix: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_secs: self.started.elapsed().map_or(0.0, |d| d.as_secs_f64()),
            exit_code,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.out_dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
