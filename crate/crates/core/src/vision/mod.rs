//! Point prescription, correspondence, tracking and back-projection.

pub mod annotation;
pub mod correspond;
pub mod depth;
pub mod pipeline;
pub mod track;

pub use annotation::{resolve, Annotation, AnnotationPoint, AnnotationSource, FrameRef, Reference};
pub use correspond::{correspond, Correspondence, MatchedPoint};
pub use depth::{back_project, back_project_pixel, DepthMode, DepthProvider, Point3DVector};
pub use pipeline::{pipeline_first_frame, FirstFrame, PointStream};
pub use track::{TrackedPoint, Tracker, TrackerConfig};
