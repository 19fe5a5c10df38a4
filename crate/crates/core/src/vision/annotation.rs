//! Human point prescription: the annotation file format, validation, and
//! resolution of clicked pixels to scene keypoints.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::VisionError;
use crate::sim::catalog::{class_of, Descriptor};
use crate::sim::render::Frame;
use crate::sim::{TaskId, WorldState};

pub const MAX_POINTS: usize = 64;
/// Click radius (pixels at 512x512) within which a click snaps to a keypoint.
pub const SNAP_RADIUS: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationSource {
    HumanUi,
    File,
}

/// Which frame was annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRef {
    pub demo_id: usize,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationPoint {
    pub label: String,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub task_id: TaskId,
    pub frame_ref: FrameRef,
    pub points: Vec<AnnotationPoint>,
    #[serde(default = "default_source")]
    pub created_by: AnnotationSource,
}

fn default_source() -> AnnotationSource {
    AnnotationSource::File
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl Annotation {
    /// Checks point count, label uniqueness and pixel bounds. Returns every
    /// violation, not just the first.
    pub fn field_errors(&self, width: u32, height: u32) -> Vec<FieldError> {
        let mut errors = Vec::new();
        if self.points.is_empty() || self.points.len() > MAX_POINTS {
            errors.push(FieldError::new(
                "points",
                format!("expected 1..={MAX_POINTS} points, got {}", self.points.len()),
            ));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.points.iter().enumerate() {
            if p.label.trim().is_empty() {
                errors.push(FieldError::new(format!("points[{i}].label"), "label is empty"));
            } else if !seen.insert(p.label.as_str()) {
                errors.push(FieldError::new(format!("points[{i}].label"), format!("duplicate label `{}`", p.label)));
            }
            if !(p.u.is_finite() && p.u >= 0.0 && p.u < width as f64) {
                errors.push(FieldError::new(format!("points[{i}].u"), format!("u={} outside [0, {width})", p.u)));
            }
            if !(p.v.is_finite() && p.v >= 0.0 && p.v < height as f64) {
                errors.push(FieldError::new(format!("points[{i}].v"), format!("v={} outside [0, {height})", p.v)));
            }
        }
        errors
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<(), VisionError> {
        let errors = self.field_errors(width, height);
        if errors.is_empty() {
            Ok(())
        } else {
            let msg: Vec<String> = errors.iter().map(|e| format!("{}: {}", e.field, e.message)).collect();
            Err(VisionError::InvalidAnnotation(msg.join("; ")))
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.points.iter().map(|p| p.label.clone()).collect()
    }

    pub fn from_json(text: &str) -> Result<Self, VisionError> {
        serde_json::from_str(text).map_err(|e| VisionError::InvalidAnnotation(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

/// An annotated point bound to the descriptor of the keypoint it lies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub label: String,
    pub u: f64,
    pub v: f64,
    pub descriptor: Descriptor,
}

/// Annotation resolved against its source frame; the input to
/// correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub task_id: TaskId,
    pub frame_ref: FrameRef,
    pub points: Vec<ReferencePoint>,
}

impl Reference {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reference descriptors belonging to the semantic class of `label`.
    pub fn class_descriptors<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Descriptor> + 'a {
        let class = class_of(label);
        self.points
            .iter()
            .filter(move |p| class_of(&p.label) == class)
            .map(|p| &p.descriptor)
    }
}

/// Snaps every clicked point to the nearest visible keypoint of `frame`
/// within [`SNAP_RADIUS`] and records its descriptor.
pub fn resolve(annotation: &Annotation, frame: &Frame, width: u32, height: u32) -> Result<Reference, VisionError> {
    annotation.validate(width, height)?;
    let mut points = Vec::with_capacity(annotation.points.len());
    for p in &annotation.points {
        let nearest = frame
            .visible_points()
            .map(|c| (c, (c.u - p.u).hypot(c.v - p.v)))
            .filter(|(_, d)| *d <= SNAP_RADIUS)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let (c, _) = nearest.ok_or_else(|| VisionError::NothingUnderClick {
            label: p.label.clone(),
            u: p.u,
            v: p.v,
            radius: SNAP_RADIUS,
        })?;
        points.push(ReferencePoint {
            label: p.label.clone(),
            u: p.u,
            v: p.v,
            descriptor: c.descriptor.clone(),
        });
    }
    Ok(Reference {
        task_id: annotation.task_id,
        frame_ref: annotation.frame_ref,
        points,
    })
}

/// Labels annotated by default for each task (gripper fingertips first).
pub fn default_labels(task: TaskId) -> &'static [&'static str] {
    match task {
        TaskId::PickObject => &["gripper_left", "gripper_right", "mug_rim", "mug_handle", "mug_base"],
        TaskId::LiftFromRack => &["gripper_left", "gripper_right", "plate_center", "plate_rim", "plate_far"],
        TaskId::ObjectOnTarget => &[
            "gripper_left",
            "gripper_right",
            "mug_rim",
            "mug_handle",
            "mug_base",
            "plate_center",
            "plate_rim",
        ],
        TaskId::TakeOut => &["gripper_left", "gripper_right", "bottle_cap", "bottle_body", "bottle_base"],
        TaskId::Sweep => &[
            "gripper_left",
            "gripper_right",
            "broom_handle",
            "broom_head",
            "board_left",
            "board_right",
        ],
        TaskId::OpenDoor => &["gripper_left", "gripper_right", "door_hinge", "door_handle", "door_edge"],
    }
}

/// Stand-in for the human: clicks the exact pixel of each labelled
/// keypoint in `frame`. Used when no annotation file is supplied.
pub fn scripted_annotation(
    state: &WorldState,
    frame: &Frame,
    labels: &[&str],
    frame_ref: FrameRef,
) -> Result<Annotation, VisionError> {
    let mut points = Vec::with_capacity(labels.len());
    for &label in labels {
        let id = state
            .keypoint_ids()
            .into_iter()
            .find(|(_, l)| l == label)
            .map(|(id, _)| id)
            .ok_or_else(|| VisionError::ClassMissing {
                class: class_of(label).to_string(),
            })?;
        let p = frame
            .point(id)
            .filter(|p| p.visible)
            .ok_or_else(|| VisionError::InvalidAnnotation(format!("keypoint `{label}` is not visible")))?;
        points.push(AnnotationPoint {
            label: label.to_string(),
            u: p.u,
            v: p.v,
        });
    }
    Ok(Annotation {
        task_id: state.task,
        frame_ref,
        points,
        created_by: AnnotationSource::File,
    })
}
