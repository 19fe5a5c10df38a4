//! Run configuration, manifests, the staged pipeline and the annotation
//! service behind the command-line tool.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod serve;

pub use config::{ConfigError, RunConfig};
pub use manifest::{RunManifest, StageStatus};
pub use pipeline::{Layout, Pipeline, Stage, StageFailure, StageReport, Variant};
pub use serve::{router, ServeState};
