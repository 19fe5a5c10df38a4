//! Run manifests: written before a stage starts, completed with output
//! hashes when it finishes, and consulted to skip up-to-date stages.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::hash_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub stage: String,
    pub config_hash: String,
    /// Hash over the stage's configuration slice and input artifacts.
    pub stage_hash: String,
    pub source_revision: String,
    pub seeds: Vec<u64>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub status: StageStatus,
    pub error: Option<String>,
    pub outputs: Vec<OutputRecord>,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Crate version plus the git commit when run from a checkout.
pub fn source_revision() -> String {
    let version = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match git {
        Some(rev) if !rev.is_empty() => format!("{version}+{rev}"),
        _ => version.to_string(),
    }
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(hash_bytes(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn start(command: &str, stage: &str, config_hash: String, stage_hash: String, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            stage: stage.to_string(),
            config_hash,
            stage_hash,
            source_revision: source_revision(),
            seeds,
            started_at: now(),
            finished_at: None,
            status: StageStatus::Running,
            error: None,
            outputs: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }

    pub fn complete(&mut self, outputs: &[PathBuf]) -> std::io::Result<()> {
        self.outputs = outputs
            .iter()
            .map(|p| {
                Ok(OutputRecord {
                    path: p.clone(),
                    sha256: file_hash(p)?,
                })
            })
            .collect::<std::io::Result<_>>()?;
        self.status = StageStatus::Complete;
        self.finished_at = Some(now());
        Ok(())
    }

    pub fn fail(&mut self, error: &str) {
        self.status = StageStatus::Failed;
        self.error = Some(error.to_string());
        self.finished_at = Some(now());
    }

    /// Complete, produced by the same stage hash, and every output still
    /// has its recorded hash.
    pub fn is_fresh(&self, stage_hash: &str) -> bool {
        self.status == StageStatus::Complete
            && self.stage_hash == stage_hash
            && self
                .outputs
                .iter()
                .all(|o| file_hash(&o.path).is_ok_and(|h| h == o.sha256))
    }
}
