//! First-frame correspondence: transfer reference points to a new scene by
//! nearest-descriptor matching over the visible keypoints.

use crate::error::VisionError;
use crate::sim::catalog::{class_of, Descriptor};
use crate::sim::render::{Frame, KeypointId};

use super::annotation::Reference;

/// One transferred point with its match score (cosine distance).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPoint {
    pub label: String,
    pub u: f64,
    pub v: f64,
    /// Camera depth of the matched keypoint.
    pub z: f64,
    pub descriptor: Descriptor,
    pub distance: f64,
    pub keypoint: KeypointId,
}

/// Reference points located in a target frame, in reference order.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub points: Vec<MatchedPoint>,
}

impl Correspondence {
    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.distance).collect()
    }
}

/// Matches every reference point to the visible keypoint of `target` with
/// the nearest descriptor.
///
/// A label whose semantic class has no visible candidate within
/// `threshold` of any reference descriptor of that class raises
/// `ClassMissing`; a present class whose best match is still too far
/// raises `MatchFailure`.
pub fn correspond(reference: &Reference, target: &Frame, threshold: f64) -> Result<Correspondence, VisionError> {
    let candidates: Vec<_> = target.visible_points().collect();
    let mut points = Vec::with_capacity(reference.len());
    for r in &reference.points {
        let class_present = candidates.iter().any(|c| {
            reference
                .class_descriptors(&r.label)
                .any(|d| d.cosine_distance(&c.descriptor) <= threshold)
        });
        if !class_present {
            return Err(VisionError::ClassMissing {
                class: class_of(&r.label).to_string(),
            });
        }
        let (best, distance) = candidates
            .iter()
            .map(|c| (*c, r.descriptor.cosine_distance(&c.descriptor)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("class present implies a candidate");
        if distance > threshold {
            return Err(VisionError::MatchFailure {
                label: r.label.clone(),
                distance,
                threshold,
            });
        }
        points.push(MatchedPoint {
            label: r.label.clone(),
            u: best.u,
            v: best.v,
            z: best.z,
            descriptor: best.descriptor.clone(),
            distance,
            keypoint: best.id,
        });
    }
    Ok(Correspondence { points })
}
