//! Tabletop simulator: world state, tasks, rendering, scripted expert and
//! demonstration recording.

pub mod camera;
pub mod catalog;
pub mod container;
pub mod expert;
pub mod record;
pub mod render;
pub mod tasks;
pub mod world;

pub use camera::{CameraIntrinsics, PixelDepth};
pub use catalog::{Catalog, Descriptor, ObjectSet};
pub use expert::scripted_expert;
pub use record::{record_demos, record_episode, DatasetHeader, DemoDataset, Trajectory};
pub use render::{Frame, KeypointId, ProjectedPoint, Renderer};
pub use tasks::{reset_task, Positions, Split, TaskId, Variation};
pub use world::{Action, EndEffectorState, SimConfig, WorldState};
