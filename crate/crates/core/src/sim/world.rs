//! World state and its pure control-step dynamics.

use std::sync::Arc;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::catalog::{Descriptor, ObjectModel};
use super::render::KeypointId;
use super::tasks::{TaskId, TaskLayout, TaskProgress};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Per-component bound on an action's translation, meters per control step.
    pub max_step: f64,
    /// Physics ticks per control step (capture rate / control rate).
    pub substeps: u32,
    pub grasp_radius: f64,
    pub grasp_threshold: f64,
    pub ee_min: [f64; 3],
    pub ee_max: [f64; 3],
    pub control_hz: u32,
    pub capture_hz: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_step: 0.03,
            substeps: 6,
            grasp_radius: 0.01,
            grasp_threshold: 0.5,
            ee_min: [0.15, -0.30, 0.0],
            ee_max: [0.75, 0.35, 0.45],
            control_hz: 5,
            capture_hz: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TaskObject,
    Distractor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn transform(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn inverse_transform(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub model: Arc<ObjectModel>,
    pub pose: Pose2,
    /// Height of the object's top surface, where its keypoints live.
    pub z_height: f64,
    /// Top-surface height at reset.
    pub rest_z: f64,
    pub role: Role,
}

impl ObjectInstance {
    pub fn keypoint_world(&self, index: usize) -> Point3<f64> {
        let p = self.pose.transform(self.model.keypoints[index].position);
        Point3::new(p[0], p[1], self.z_height)
    }

    pub fn keypoint_world_by_label(&self, label: &str) -> Option<Point3<f64>> {
        let i = self.model.keypoints.iter().position(|k| k.label == label)?;
        Some(self.keypoint_world(i))
    }

    pub fn grasp_point(&self) -> Option<Point3<f64>> {
        let i = self.model.keypoints.iter().position(|k| k.grasp)?;
        Some(self.keypoint_world(i))
    }

    pub fn contains_world(&self, x: f64, y: f64) -> bool {
        self.model.contains(self.pose.inverse_transform([x, y]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldObject {
    pub object: usize,
    /// Object pose offset from the end effector at grasp time.
    pub offset: [f64; 3],
    /// For hinged objects: model-frame angle of the grasped keypoint.
    pub hinge_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndEffectorState {
    pub position: [f64; 3],
    /// 0 closed, 1 open.
    pub gripper: f64,
    pub held: Option<HeldObject>,
}

impl EndEffectorState {
    pub fn point(&self) -> Point3<f64> {
        Point3::new(self.position[0], self.position[1], self.position[2])
    }

    /// Finger half-separation along world x.
    pub fn finger_offset(&self) -> f64 {
        FINGER_BASE + FINGER_TRAVEL * self.gripper
    }

    /// (left, right) fingertip positions.
    pub fn fingers(&self) -> [Point3<f64>; 2] {
        let s = self.finger_offset();
        let p = self.position;
        [
            Point3::new(p[0] - s, p[1], p[2]),
            Point3::new(p[0] + s, p[1], p[2]),
        ]
    }
}

pub const FINGER_BASE: f64 = 0.006;
pub const FINGER_TRAVEL: f64 = 0.02;
pub const FINGER_RADIUS: f64 = 0.007;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta_position: [f64; 3],
    pub gripper_command: f64,
}

impl Action {
    pub const DIM: usize = 4;

    pub fn new(delta: [f64; 3], gripper_command: f64) -> Self {
        Self {
            delta_position: delta,
            gripper_command,
        }
    }

    /// No translation; keeps the gripper at `gripper`.
    pub fn hold(gripper: f64) -> Self {
        Self::new([0.0; 3], gripper)
    }

    pub fn to_array(&self) -> [f64; 4] {
        let d = self.delta_position;
        [d[0], d[1], d[2], self.gripper_command]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], v[3])
    }

    /// Clamps each translation component to `max_step` and the gripper to [0, 1].
    pub fn clamped(&self, max_step: f64) -> (Self, bool) {
        let mut clamped = false;
        let mut d = self.delta_position;
        for c in d.iter_mut() {
            if !c.is_finite() {
                *c = 0.0;
                clamped = true;
            }
            if c.abs() > max_step {
                *c = c.signum() * max_step;
                clamped = true;
            }
        }
        let g = if self.gripper_command.is_finite() {
            self.gripper_command.clamp(0.0, 1.0)
        } else {
            1.0
        };
        (Self::new(d, g), clamped)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateFlags {
    pub clamped_actions: u32,
    pub clamped_workspace: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub task: TaskId,
    pub layout: TaskLayout,
    pub objects: Vec<ObjectInstance>,
    pub ee: EndEffectorState,
    pub progress: TaskProgress,
    pub flags: StateFlags,
}

/// Everything the renderer needs to know about one keypoint in the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldKeypoint {
    /// `Some(object index)` or `None` for the gripper.
    pub object: Option<usize>,
    pub index: usize,
    pub label: String,
    pub position: Point3<f64>,
    pub descriptor: Descriptor,
}

impl WorldState {
    pub fn task_objects(&self) -> impl Iterator<Item = (usize, &ObjectInstance)> {
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.role == Role::TaskObject)
    }

    pub fn object_of_class(&self, class: &str) -> Option<(usize, &ObjectInstance)> {
        self.task_objects().find(|(_, o)| o.model.class == class)
    }

    pub fn held_index(&self) -> Option<usize> {
        self.ee.held.map(|h| h.object)
    }

    /// Gripper fingertips followed by every object keypoint, in object order.
    pub fn keypoints(&self, gripper: (&Descriptor, &Descriptor)) -> Vec<WorldKeypoint> {
        let fingers = self.ee.fingers();
        let mut out = vec![
            WorldKeypoint {
                object: None,
                index: 0,
                label: "gripper_left".into(),
                position: fingers[0],
                descriptor: gripper.0.clone(),
            },
            WorldKeypoint {
                object: None,
                index: 1,
                label: "gripper_right".into(),
                position: fingers[1],
                descriptor: gripper.1.clone(),
            },
        ];
        for (oi, obj) in self.objects.iter().enumerate() {
            for (ki, kp) in obj.model.keypoints.iter().enumerate() {
                out.push(WorldKeypoint {
                    object: Some(oi),
                    index: ki,
                    label: kp.label.clone(),
                    position: obj.keypoint_world(ki),
                    descriptor: kp.descriptor.clone(),
                });
            }
        }
        out
    }

    /// Keypoint ids with their semantic labels, in [`Self::keypoints`] order.
    pub fn keypoint_ids(&self) -> Vec<(KeypointId, String)> {
        let mut out = vec![
            (KeypointId { object: None, index: 0 }, "gripper_left".to_string()),
            (KeypointId { object: None, index: 1 }, "gripper_right".to_string()),
        ];
        for (oi, obj) in self.objects.iter().enumerate() {
            for (ki, kp) in obj.model.keypoints.iter().enumerate() {
                out.push((KeypointId { object: Some(oi), index: ki }, kp.label.clone()));
            }
        }
        out
    }

    /// Height of the surface an object would rest on at `(x, y)`.
    pub fn support_level(&self, x: f64, y: f64, exclude: usize) -> f64 {
        let mut level = self.layout.level_at(x, y);
        for (i, o) in self.objects.iter().enumerate() {
            if i == exclude || self.held_index() == Some(i) {
                continue;
            }
            if o.model.class == "plate" && o.contains_world(x, y) {
                level = level.max(o.z_height);
            }
        }
        level
    }

    /// One control step: `cfg.substeps` physics ticks, then task progress.
    pub fn step(&self, action: &Action, cfg: &SimConfig) -> WorldState {
        self.step_observed(action, cfg, |_| {})
    }

    /// [`Self::step`], calling `observe` with the state before every tick.
    pub fn step_observed(
        &self,
        action: &Action,
        cfg: &SimConfig,
        mut observe: impl FnMut(&WorldState),
    ) -> WorldState {
        let (action, clamped) = action.clamped(cfg.max_step);
        let mut next = self.clone();
        if clamped {
            next.flags.clamped_actions += 1;
        }
        let n = cfg.substeps.max(1);
        let sub = [
            action.delta_position[0] / n as f64,
            action.delta_position[1] / n as f64,
            action.delta_position[2] / n as f64,
        ];
        for _ in 0..n {
            observe(&next);
            next.tick(sub, action.gripper_command, cfg);
        }
        next.progress = self.task.update_progress(&next);
        next
    }

    /// One physics tick with an already clamped translation.
    pub fn tick(&mut self, delta: [f64; 3], gripper_command: f64, cfg: &SimConfig) {
        let mut hit_bounds = false;
        for axis in 0..3 {
            let p = self.ee.position[axis] + delta[axis];
            let c = p.clamp(cfg.ee_min[axis], cfg.ee_max[axis]);
            if c != p {
                hit_bounds = true;
            }
            self.ee.position[axis] = c;
        }
        if hit_bounds {
            self.flags.clamped_workspace += 1;
        }

        let previous = self.ee.gripper;
        self.ee.gripper = gripper_command;
        let closing = previous >= cfg.grasp_threshold && gripper_command < cfg.grasp_threshold;
        let opening = previous < cfg.grasp_threshold && gripper_command >= cfg.grasp_threshold;
        if closing && self.ee.held.is_none() {
            self.try_grasp(cfg);
        } else if opening {
            self.release();
        }
        self.follow_held();
    }

    fn try_grasp(&mut self, cfg: &SimConfig) {
        let ee = self.ee.point();
        let mut best: Option<(usize, f64, Point3<f64>)> = None;
        for (oi, obj) in self.objects.iter().enumerate() {
            if !obj.model.graspable {
                continue;
            }
            for (ki, kp) in obj.model.keypoints.iter().enumerate() {
                if !kp.grasp {
                    continue;
                }
                let p = obj.keypoint_world(ki);
                let d = (p - ee).norm();
                if d <= cfg.grasp_radius && best.is_none_or(|b| d < b.1) {
                    best = Some((oi, d, p));
                }
            }
        }
        if let Some((oi, _, p)) = best {
            let obj = &self.objects[oi];
            let local = obj.pose.inverse_transform([p.x, p.y]);
            self.ee.held = Some(HeldObject {
                object: oi,
                offset: [
                    obj.pose.x - ee.x,
                    obj.pose.y - ee.y,
                    obj.z_height - ee.z,
                ],
                hinge_angle: local[1].atan2(local[0]),
            });
        }
    }

    fn release(&mut self) {
        if let Some(h) = self.ee.held.take() {
            let (x, y) = (self.objects[h.object].pose.x, self.objects[h.object].pose.y);
            if !self.objects[h.object].model.hinged {
                let level = self.support_level(x, y, h.object);
                let obj = &mut self.objects[h.object];
                obj.z_height = level + obj.model.height;
            }
        }
    }

    fn follow_held(&mut self) {
        let Some(h) = self.ee.held else { return };
        let ee = self.ee.position;
        let obj = &mut self.objects[h.object];
        if obj.model.hinged {
            let yaw = (ee[1] - obj.pose.y).atan2(ee[0] - obj.pose.x) - h.hinge_angle;
            obj.pose.yaw = yaw;
        } else {
            obj.pose.x = ee[0] + h.offset[0];
            obj.pose.y = ee[1] + h.offset[1];
            obj.z_height = ee[2] + h.offset[2];
        }
    }
}
