//! Correspond on the first frame, then track and back-project frame by
//! frame. Dataset building and closed-loop inference share this path.

use crate::error::VisionError;
use crate::sim::render::Frame;
use crate::sim::CameraIntrinsics;

use super::annotation::Reference;
use super::correspond::{correspond, Correspondence};
use super::depth::{back_project, DepthProvider, Point3DVector};
use super::track::{TrackedPoint, Tracker, TrackerConfig};

#[derive(Debug, Clone)]
pub struct PointStream {
    pub camera: CameraIntrinsics,
    pub tracker: Tracker,
    pub depth: DepthProvider,
    held: Vec<Option<[f64; 3]>>,
    frame_counter: usize,
}

/// Output of [`pipeline_first_frame`].
#[derive(Debug, Clone)]
pub struct FirstFrame {
    pub stream: PointStream,
    pub correspondence: Correspondence,
    pub observation: Point3DVector,
}

pub fn pipeline_first_frame(
    reference: &Reference,
    first: &Frame,
    camera: &CameraIntrinsics,
    tracker: TrackerConfig,
    depth: DepthProvider,
) -> Result<FirstFrame, VisionError> {
    let correspondence = correspond(reference, first, tracker.descriptor_threshold)?;
    let tracker = Tracker::init(tracker, &correspondence);
    let mut stream = PointStream {
        camera: camera.clone(),
        tracker,
        depth,
        held: Vec::new(),
        frame_counter: 0,
    };
    let row = stream.tracker.row();
    let observation = stream.lift(&row);
    Ok(FirstFrame {
        stream,
        correspondence,
        observation,
    })
}

impl PointStream {
    fn lift(&mut self, row: &[TrackedPoint]) -> Point3DVector {
        let frame = self.frame_counter;
        let pts: Vec<(f64, f64, Option<f64>)> = row
            .iter()
            .enumerate()
            .map(|(i, p)| (p.u, p.v, p.z.map(|z| self.depth.depth(z, frame, i))))
            .collect();
        self.frame_counter += 1;
        back_project(&self.camera, &pts, &mut self.held)
    }

    /// Tracks into `frame` and returns the lifted 3D observation.
    pub fn observe(&mut self, frame: &Frame) -> Point3DVector {
        let row = self.tracker.step(frame);
        self.lift(&row)
    }

    pub fn frames_observed(&self) -> usize {
        self.frame_counter
    }
}
