//! Run manifests: enough to re-run a command and check it reproduced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Every resolved flag, including those read from a config file.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFingerprint>,
    pub artifacts: Vec<String>,
    pub wall_seconds: f64,
    pub status: RunStatus,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn start(command: &Command, seed: Option<u64>) -> Result<Self> {
        Ok(RunManifest {
            subcommand: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(command)?,
            seed,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            wall_seconds: 0.0,
            status: RunStatus::Running,
            error: None,
        })
    }

    pub fn fingerprint_inputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let sha256 = fingerprint(p)?;
            self.inputs.push(InputFingerprint {
                path: p.clone(),
                sha256,
            });
        }
        Ok(())
    }

    pub fn succeed(&mut self, artifacts: &[String]) {
        self.artifacts = artifacts.to_vec();
        self.status = RunStatus::Ok;
    }

    pub fn fail(&mut self, e: &anyhow::Error) {
        self.status = RunStatus::Failed;
        self.error = Some(format!("{e:#}"));
    }

    /// The recorded command, ready to run again.
    pub fn command(&self) -> Result<Command> {
        serde_json::from_value(self.config.clone()).context("manifest config does not describe a command")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// SHA-256 of a file, or of a directory's files in sorted path order
/// (each contributing its relative path and contents). Manifests and loss
/// logs inside a directory are skipped since they carry timings.
pub fn fingerprint(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            let name = rel.to_string_lossy();
            if name.ends_with(MANIFEST_FILE) || name.contains("loss_log") {
                continue;
            }
            h.update(name.as_bytes());
            h.update([0]);
            h.update(fs::read(path.join(&rel)).with_context(|| format!("reading {}", rel.display()))?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("inside root").to_path_buf());
        }
    }
    Ok(())
}
