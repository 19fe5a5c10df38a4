//! Point-based behavior cloning on a simulated tabletop.

pub mod app;
pub mod error;
pub mod eval;
pub mod sim;
pub mod policy;
pub mod train;
pub mod vision;
