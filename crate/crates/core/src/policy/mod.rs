//! Point-conditioned causal transformer policy.

pub mod ensemble;
pub mod io;
pub mod model;
pub mod nn;
pub mod obs;
pub mod runner;
pub mod scalar;

pub use ensemble::{ensemble_weights, temporal_ensemble};
pub use model::{masked_mse, Policy, PolicyConfig, ACTION_DIM};
pub use obs::{graph_vector, ObsMode, Normalizer};
pub use runner::PolicyRunner;
pub use scalar::Scalar;
