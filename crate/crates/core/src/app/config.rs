//! Run configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::eval::Condition;
use crate::policy::ObsMode;
use crate::sim::TaskId;
use crate::train::TrainConfig;
use crate::vision::DepthMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub n_demos: usize,
    /// First episode seed; failed rollouts advance to the next seed.
    pub seed: u64,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self { n_demos: 60, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSON annotation file; a scripted click on the first frame of demo
    /// `reference_demo` is used when absent.
    pub annotation: Option<PathBuf>,
    pub reference_demo: usize,
    /// Keep only the first `n_points` annotated points (all when absent).
    pub n_points: Option<usize>,
    pub depth: DepthMode,
    pub predicted_bias: f64,
    pub predicted_sigma: f64,
    pub depth_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            annotation: None,
            reference_demo: 0,
            n_points: None,
            depth: DepthMode::Camera,
            predicted_bias: 1.02,
            predicted_sigma: 0.005,
            depth_seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub conditions: Vec<Condition>,
    pub n_trials: usize,
    pub seed: u64,
    pub distractors: usize,
    /// Also train and evaluate the raw-raster baseline.
    pub baseline: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            conditions: vec![Condition::InDomain, Condition::NovelInstance, Condition::Distractor],
            n_trials: 50,
            seed: 10_000,
            distractors: 3,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskId,
    pub mode: ObsMode,
    pub demos: DemoSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskId::PickObject,
            mode: ObsMode::Point,
            demos: DemoSection::default(),
            data: DataSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.mode == ObsMode::Raster {
            return bad("mode must be point or graph; the raster baseline is enabled with eval.baseline");
        }
        if self.demos.n_demos == 0 {
            return bad("demos.n_demos must be positive");
        }
        if self.data.reference_demo >= self.demos.n_demos {
            return bad("data.reference_demo must index a recorded demo");
        }
        if self.data.n_points == Some(0) {
            return bad("data.n_points must be positive");
        }
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || !(t.lr > 0.0) {
            return bad("train.steps, train.batch_size and train.lr must be positive");
        }
        if t.heads == 0 || !t.width.is_multiple_of(t.heads) {
            return bad("train.width must be divisible by train.heads");
        }
        if t.history == 0 || t.chunk == 0 {
            return bad("train.history and train.chunk must be at least 1");
        }
        if self.eval.conditions.contains(&Condition::GraphPrior) && self.mode != ObsMode::Point {
            return bad("the graph_prior condition compares against a point-mode run");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
