//! Online point tracker, one frame at a time.
//!
//! Each point keeps a constant-velocity motion model. In a new frame the
//! point is matched to the visible keypoint with the nearest descriptor
//! inside the gate around its prediction. A point that finds nothing in
//! the gate gets one wider search (re-acquisition); if that fails too it
//! coasts on its velocity and is reported invisible.

use serde::{Deserialize, Serialize};

use crate::sim::catalog::Descriptor;
use crate::sim::render::{Frame, ProjectedPoint};

use super::correspond::Correspondence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// Gating radius around the constant-velocity prediction (pixels).
    pub gate_px: f64,
    /// Radius of the fallback search for a point without a gated match.
    pub reacquire_px: f64,
    /// Maximum cosine distance for a descriptor match.
    pub descriptor_threshold: f64,
}

impl TrackerConfig {
    pub fn new(descriptor_threshold: f64) -> Self {
        Self {
            gate_px: 8.0,
            reacquire_px: 64.0,
            descriptor_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointTrack {
    pub label: String,
    pub descriptor: Descriptor,
    pub u: f64,
    pub v: f64,
    /// Pixels per frame.
    pub velocity: [f64; 2],
    pub visible: bool,
    /// Depth of the last measurement; `None` while coasting.
    pub z: Option<f64>,
    last_measured: [f64; 2],
    frames_since_measured: u32,
    /// Frames in which this point was not measured.
    pub lost_frames: u32,
    /// Times this point was recovered after being lost.
    pub reacquisitions: u32,
}

/// One frame of tracker output, in annotation order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPoint {
    pub u: f64,
    pub v: f64,
    pub z: Option<f64>,
    pub visible: bool,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub points: Vec<PointTrack>,
    pub frames_seen: usize,
}

impl Tracker {
    /// Starts tracks at the corresponded first-frame locations.
    pub fn init(config: TrackerConfig, first: &Correspondence) -> Self {
        let points = first
            .points
            .iter()
            .map(|m| PointTrack {
                label: m.label.clone(),
                descriptor: m.descriptor.clone(),
                u: m.u,
                v: m.v,
                velocity: [0.0, 0.0],
                visible: true,
                z: Some(m.z),
                last_measured: [m.u, m.v],
                frames_since_measured: 0,
                lost_frames: 0,
                reacquisitions: 0,
            })
            .collect();
        Self {
            config,
            points,
            frames_seen: 1,
        }
    }

    /// Current estimate for every point.
    pub fn row(&self) -> Vec<TrackedPoint> {
        self.points
            .iter()
            .map(|p| TrackedPoint {
                u: p.u,
                v: p.v,
                z: p.z,
                visible: p.visible,
                descriptor: p.descriptor.clone(),
            })
            .collect()
    }

    pub fn loss_counters(&self) -> Vec<u32> {
        self.points.iter().map(|p| p.lost_frames).collect()
    }

    fn best_within<'a>(
        &self,
        candidates: &[&'a ProjectedPoint],
        descriptor: &Descriptor,
        center: [f64; 2],
        radius: f64,
    ) -> Option<&'a ProjectedPoint> {
        candidates
            .iter()
            .filter(|c| (c.u - center[0]).hypot(c.v - center[1]) <= radius)
            .map(|c| (*c, descriptor.cosine_distance(&c.descriptor)))
            .filter(|(_, d)| *d <= self.config.descriptor_threshold)
            .min_by(|a, b| {
                a.1.total_cmp(&b.1).then_with(|| {
                    let da = (a.0.u - center[0]).hypot(a.0.v - center[1]);
                    let db = (b.0.u - center[0]).hypot(b.0.v - center[1]);
                    da.total_cmp(&db)
                })
            })
            .map(|(c, _)| c)
    }

    /// Advances every track by one frame.
    pub fn step(&mut self, frame: &Frame) -> Vec<TrackedPoint> {
        let candidates: Vec<&ProjectedPoint> = frame.visible_points().collect();
        let config = self.config;
        for i in 0..self.points.len() {
            let p = &self.points[i];
            let predicted = [p.u + p.velocity[0], p.v + p.velocity[1]];
            let gated = self.best_within(&candidates, &p.descriptor, predicted, config.gate_px);
            let found = gated.or_else(|| self.best_within(&candidates, &p.descriptor, predicted, config.reacquire_px));
            let p = &mut self.points[i];
            match found {
                Some(c) => {
                    let n = (p.frames_since_measured + 1) as f64;
                    p.velocity = [(c.u - p.last_measured[0]) / n, (c.v - p.last_measured[1]) / n];
                    if !p.visible {
                        p.reacquisitions += 1;
                    }
                    p.u = c.u;
                    p.v = c.v;
                    p.z = Some(c.z);
                    p.visible = true;
                    p.last_measured = [c.u, c.v];
                    p.frames_since_measured = 0;
                }
                None => {
                    p.u = predicted[0];
                    p.v = predicted[1];
                    p.z = None;
                    p.visible = false;
                    p.frames_since_measured += 1;
                    p.lost_frames += 1;
                }
            }
        }
        self.frames_seen += 1;
        self.row()
    }
}
