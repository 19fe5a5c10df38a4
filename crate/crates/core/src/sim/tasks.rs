//! Task definitions: layouts, reset, position splits and success predicates.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, ObjectSet, ShapePart, DISTRACTOR_CLASSES};
use super::world::{EndEffectorState, ObjectInstance, Pose2, Role, StateFlags, WorldState};
use crate::error::SimError;

/// Version tag of the geometric success predicates below.
pub const PREDICATE_VERSION: &str = "tabletop-predicates/v1";

/// Consecutive control steps (1 s at 5 Hz) a lift must be held.
pub const HOLD_STEPS: u32 = 5;
pub const LIFT_HEIGHT: f64 = 0.10;

pub const HOME: [f64; 3] = [0.45, -0.20, 0.14];

/// Object placement bounds (meters).
pub const WORKSPACE_MIN: [f64; 2] = [0.20, -0.20];
pub const WORKSPACE_MAX: [f64; 2] = [0.70, 0.32];

pub const RACK_UPPER: f64 = 0.15;
pub const RACK_LOWER: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    PickObject,
    LiftFromRack,
    ObjectOnTarget,
    TakeOut,
    Sweep,
    OpenDoor,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::PickObject,
        TaskId::LiftFromRack,
        TaskId::ObjectOnTarget,
        TaskId::TakeOut,
        TaskId::Sweep,
        TaskId::OpenDoor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::PickObject => "pick_object",
            TaskId::LiftFromRack => "lift_from_rack",
            TaskId::ObjectOnTarget => "object_on_target",
            TaskId::TakeOut => "take_out",
            TaskId::Sweep => "sweep",
            TaskId::OpenDoor => "open_door",
        }
    }

    /// Column head used in result tables.
    pub fn column(self) -> &'static str {
        match self {
            TaskId::PickObject => "Pick",
            TaskId::LiftFromRack => "Lift",
            TaskId::ObjectOnTarget => "Place",
            TaskId::TakeOut => "TakeOut",
            TaskId::Sweep => "Sweep",
            TaskId::OpenDoor => "OpenDoor",
        }
    }

    /// Class of the object whose position is varied.
    pub fn primary_class(self) -> &'static str {
        match self {
            TaskId::PickObject | TaskId::ObjectOnTarget => "mug",
            TaskId::LiftFromRack => "plate",
            TaskId::TakeOut => "bottle",
            TaskId::Sweep => "broom",
            TaskId::OpenDoor => "door",
        }
    }

    /// Task objects in scene order: (class, fixed position if not varied).
    fn objects(self) -> &'static [(&'static str, Option<[f64; 2]>)] {
        match self {
            TaskId::PickObject => &[("mug", None)],
            TaskId::LiftFromRack => &[("plate", None)],
            TaskId::ObjectOnTarget => &[("mug", None), ("plate", Some([0.56, 0.06]))],
            TaskId::TakeOut => &[("bottle", None)],
            TaskId::Sweep => &[("broom", None), ("board", Some([0.54, 0.12]))],
            TaskId::OpenDoor => &[("door", None)],
        }
    }

    /// Control steps before an episode is declared a failure.
    pub fn horizon(self) -> usize {
        match self {
            TaskId::PickObject | TaskId::LiftFromRack => 40,
            TaskId::TakeOut | TaskId::OpenDoor => 45,
            TaskId::ObjectOnTarget | TaskId::Sweep => 60,
        }
    }

    /// Planar grid of candidate positions for the primary object.
    pub fn position_grid(self) -> Vec<[f64; 2]> {
        let (x0, x1, y0, y1): (f64, f64, f64, f64) = match self {
            TaskId::PickObject => (0.32, 0.58, -0.06, 0.16),
            TaskId::LiftFromRack => (0.34, 0.56, 0.02, 0.16),
            TaskId::ObjectOnTarget => (0.30, 0.44, -0.06, 0.14),
            TaskId::TakeOut => (0.36, 0.54, 0.06, 0.16),
            TaskId::Sweep => (0.30, 0.38, -0.04, 0.04),
            TaskId::OpenDoor => (0.36, 0.50, 0.10, 0.18),
        };
        let step: f64 = 0.02;
        let nx = ((x1 - x0) / step).round() as usize + 1;
        let ny = ((y1 - y0) / step).round() as usize + 1;
        let mut out = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                out.push([x0 + step * i as f64, y0 + step * j as f64]);
            }
        }
        out
    }

    /// Deterministic 70/30 partition of [`Self::position_grid`].
    pub fn split_positions(self, split: Split) -> Vec<[f64; 2]> {
        let mut grid = self.position_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5B17 ^ (self as u64) << 8);
        grid.shuffle(&mut rng);
        let n_train = (grid.len() as f64 * 0.7).round() as usize;
        match split {
            Split::Train => grid[..n_train].to_vec(),
            Split::Eval => grid[n_train..].to_vec(),
        }
    }

    pub fn layout(self) -> TaskLayout {
        match self {
            TaskId::LiftFromRack => TaskLayout {
                rack: Some(Rack {
                    min: [0.28, -0.02],
                    max: [0.62, 0.26],
                    level: RACK_UPPER,
                }),
            },
            TaskId::TakeOut => TaskLayout {
                rack: Some(Rack {
                    min: [0.28, 0.0],
                    max: [0.62, 0.26],
                    level: RACK_LOWER,
                }),
            },
            _ => TaskLayout { rack: None },
        }
    }

    /// Recomputes task progress for a state just produced by a control step.
    pub fn update_progress(self, s: &WorldState) -> TaskProgress {
        let mut p = s.progress;
        if p.success {
            return p;
        }
        let primary = s.object_of_class(self.primary_class());
        let held = |i: usize| s.held_index() == Some(i);
        match self {
            TaskId::PickObject | TaskId::LiftFromRack => {
                let lifted = primary
                    .map(|(i, o)| held(i) && o.z_height >= o.rest_z + LIFT_HEIGHT)
                    .unwrap_or(false);
                p.hold_steps = if lifted { p.hold_steps + 1 } else { 0 };
                p.success = p.hold_steps >= HOLD_STEPS;
            }
            TaskId::TakeOut => {
                let rack_front = s.layout.rack.map(|r| r.min[1]).unwrap_or(0.0);
                let out = primary
                    .map(|(i, o)| held(i) && o.pose.y <= rack_front - 0.06)
                    .unwrap_or(false);
                p.hold_steps = if out { p.hold_steps + 1 } else { 0 };
                p.success = p.hold_steps >= 3;
            }
            TaskId::ObjectOnTarget => {
                if let (Some((mi, mug)), Some((_, plate))) = (primary, s.object_of_class("plate")) {
                    let dx = mug.pose.x - plate.pose.x;
                    let dy = mug.pose.y - plate.pose.y;
                    let radius = plate.model.bounding_radius();
                    let resting = (mug.z_height - (plate.z_height + mug.model.height)).abs() < 1e-9;
                    p.success = !held(mi) && resting && dx.hypot(dy) <= 0.7 * radius;
                }
            }
            TaskId::Sweep => {
                if let (Some((bi, broom)), Some((_, board))) = (primary, s.object_of_class("board")) {
                    let head = broom.keypoint_world_by_label("broom_head").expect("broom head");
                    let local = board.pose.inverse_transform([head.x, head.y]);
                    let half_w = board_half_width(board);
                    let low = head.z <= board.z_height + 0.04;
                    if held(bi) && low && local[1].abs() <= 0.06 && local[0].abs() <= half_w {
                        let [lo, hi] = p.sweep_range.unwrap_or([local[0], local[0]]);
                        p.sweep_range = Some([lo.min(local[0]), hi.max(local[0])]);
                    }
                    p.success = p.sweep_range.is_some_and(|[lo, hi]| hi - lo >= 1.4 * half_w);
                }
            }
            TaskId::OpenDoor => {
                if let Some((_, door)) = primary {
                    p.success = door.pose.yaw <= -(60f64.to_radians());
                }
            }
        }
        p
    }
}

/// Half of the board's extent along its model x axis.
pub(crate) fn board_half_width(board: &ObjectInstance) -> f64 {
    match board.model.shape.first() {
        Some(ShapePart::Polygon { vertices }) => vertices.iter().map(|v| v[0]).fold(0.0, f64::max),
        _ => 0.1,
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| SimError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rack {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub rack: Option<Rack>,
}

impl TaskLayout {
    pub fn level_at(&self, x: f64, y: f64) -> f64 {
        match self.rack {
            Some(r) if x >= r.min[0] && x <= r.max[0] && y >= r.min[1] && y <= r.max[1] => r.level,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskProgress {
    pub hold_steps: u32,
    pub success: bool,
    /// Board-frame x extent covered by the broom head so far.
    pub sweep_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positions {
    /// One position per varied object (the primary object).
    Explicit(Vec<[f64; 2]>),
    /// Drawn by seed from the given split of the task grid.
    Sampled(Split),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub object_set: ObjectSet,
    /// Instance index within the object set; drawn by seed when absent.
    pub instance: Option<usize>,
    pub positions: Positions,
    pub distractors: usize,
}

impl Variation {
    pub fn sampled(object_set: ObjectSet, split: Split, distractors: usize) -> Self {
        Self {
            object_set,
            instance: None,
            positions: Positions::Sampled(split),
            distractors,
        }
    }

    pub fn train() -> Self {
        Self::sampled(ObjectSet::InDomain, Split::Train, 0)
    }
}

/// Builds the initial world for `task`. Pure function of its arguments.
pub fn reset_task(
    catalog: &Catalog,
    task: TaskId,
    variation: &Variation,
    seed: u64,
) -> Result<WorldState, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7A5C_0000_0000 ^ ((task as u64) << 40));
    let primary_pos = match &variation.positions {
        Positions::Explicit(ps) => {
            if ps.len() != 1 {
                return Err(SimError::PositionCount {
                    task: task.to_string(),
                    expected: 1,
                    got: ps.len(),
                });
            }
            check_workspace(ps[0])?;
            ps[0]
        }
        Positions::Sampled(split) => {
            let ps = task.split_positions(*split);
            ps[rng.random_range(0..ps.len())]
        }
    };
    let layout = task.layout();
    let mut objects = Vec::new();
    for (n, &(class, fixed)) in task.objects().iter().enumerate() {
        let candidates = catalog.instances(class, variation.object_set);
        let index = match (n, variation.instance) {
            (0, Some(i)) => i,
            (0, None) => rng.random_range(0..candidates.len().max(1)),
            // secondary objects: a single fixed instance per object set
            _ => 0,
        };
        let model = candidates.get(index).cloned().ok_or(SimError::MissingInstance {
            class: class.to_string(),
            set: variation.object_set.name(),
            index,
        })?;
        let pos = fixed.unwrap_or(primary_pos);
        let level = layout.level_at(pos[0], pos[1]);
        let z = level + model.height;
        objects.push(ObjectInstance {
            model,
            pose: Pose2 {
                x: pos[0],
                y: pos[1],
                yaw: 0.0,
            },
            z_height: z,
            rest_z: z,
            role: Role::TaskObject,
        });
    }
    place_distractors(catalog, &mut rng, &mut objects, variation.distractors)?;

    Ok(WorldState {
        task,
        layout,
        objects,
        ee: EndEffectorState {
            position: HOME,
            gripper: 1.0,
            held: None,
        },
        progress: TaskProgress::default(),
        flags: StateFlags::default(),
    })
}

fn check_workspace(p: [f64; 2]) -> Result<(), SimError> {
    let inside = (0..2).all(|a| p[a] >= WORKSPACE_MIN[a] && p[a] <= WORKSPACE_MAX[a]);
    if inside {
        Ok(())
    } else {
        Err(SimError::OutsideWorkspace {
            x: p[0],
            y: p[1],
            x_min: WORKSPACE_MIN[0],
            x_max: WORKSPACE_MAX[0],
            y_min: WORKSPACE_MIN[1],
            y_max: WORKSPACE_MAX[1],
        })
    }
}

/// Distractors go in strips behind and beside the task region, where they
/// can never sit between the camera and a task keypoint.
fn place_distractors(
    catalog: &Catalog,
    rng: &mut ChaCha8Rng,
    objects: &mut Vec<ObjectInstance>,
    n: usize,
) -> Result<(), SimError> {
    let zones: [([f64; 2], [f64; 2]); 3] = [
        ([0.24, 0.255], [0.66, 0.30]),
        ([0.20, -0.16], [0.235, 0.22]),
        ([0.665, -0.16], [0.70, 0.22]),
    ];
    let pool: Vec<_> = DISTRACTOR_CLASSES
        .iter()
        .flat_map(|c| catalog.instances(c, ObjectSet::InDomain))
        .collect();
    for k in 0..n {
        let model = pool[rng.random_range(0..pool.len())].clone();
        let r = model.bounding_radius();
        let mut placed = false;
        for _ in 0..200 {
            let (lo, hi) = zones[rng.random_range(0..zones.len())];
            let x = rng.random_range(lo[0]..=hi[0]);
            let y = rng.random_range(lo[1]..=hi[1]);
            let clear = objects.iter().all(|o| {
                (o.pose.x - x).hypot(o.pose.y - y) > o.model.bounding_radius() + r + 0.01
            });
            if clear {
                let z = model.height;
                objects.push(ObjectInstance {
                    model: model.clone(),
                    pose: Pose2 {
                        x,
                        y,
                        yaw: rng.random_range(-0.5..0.5),
                    },
                    z_height: z,
                    rest_z: z,
                    role: Role::Distractor,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            log::warn!("could not place distractor {k}; scene too crowded");
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn key(p: [f64; 2]) -> (i64, i64) {
        ((p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64)
    }

    #[test]
    fn unknown_task_rejected() {
        assert_eq!(
            "fold_laundry".parse::<TaskId>(),
            Err(SimError::UnknownTask("fold_laundry".into()))
        );
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
        }
    }

    #[test]
    fn explicit_reset_is_direct_and_deterministic() {
        let cat = Catalog::standard();
        let v = Variation {
            object_set: ObjectSet::InDomain,
            instance: Some(1),
            positions: Positions::Explicit(vec![[0.3, 0.2]]),
            distractors: 0,
        };
        let a = reset_task(&cat, TaskId::PickObject, &v, 7).unwrap();
        let b = reset_task(&cat, TaskId::PickObject, &v, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.task_objects().count(), 1);
        assert_eq!(a.objects.len(), 1);
        assert_eq!((a.objects[0].pose.x, a.objects[0].pose.y), (0.3, 0.2));
        assert_eq!(a.objects[0].model.model_id, "mug/1");
    }

    #[test]
    fn outside_workspace_reports_bounds() {
        let cat = Catalog::standard();
        let v = Variation {
            object_set: ObjectSet::InDomain,
            instance: None,
            positions: Positions::Explicit(vec![[0.9, 0.0]]),
            distractors: 0,
        };
        let err = reset_task(&cat, TaskId::PickObject, &v, 1).unwrap_err();
        assert!(matches!(err, SimError::OutsideWorkspace { x_max, .. } if x_max == WORKSPACE_MAX[0]));
    }

    #[test]
    fn splits_are_disjoint_and_cover_grid() {
        for t in TaskId::ALL {
            let train: HashSet<_> = t.split_positions(Split::Train).into_iter().map(key).collect();
            let eval: HashSet<_> = t.split_positions(Split::Eval).into_iter().map(key).collect();
            assert!(train.is_disjoint(&eval), "{t}");
            assert_eq!(train.len() + eval.len(), t.position_grid().len());
            assert!(!eval.is_empty());
        }
    }

    #[test]
    fn eval_resets_draw_only_held_out_positions() {
        let cat = Catalog::standard();
        let train: HashSet<_> = TaskId::PickObject
            .split_positions(Split::Train)
            .into_iter()
            .map(key)
            .collect();
        let v = Variation::sampled(ObjectSet::InDomain, Split::Eval, 0);
        for seed in 0..200 {
            let s = reset_task(&cat, TaskId::PickObject, &v, seed).unwrap();
            let p = [s.objects[0].pose.x, s.objects[0].pose.y];
            assert!(!train.contains(&key(p)));
        }
        let s = reset_task(&cat, TaskId::PickObject, &v, 11).unwrap();
        assert!(!train.contains(&key([s.objects[0].pose.x, s.objects[0].pose.y])));
    }

    #[test]
    fn distractors_are_placed_clear_of_task_objects() {
        let cat = Catalog::standard();
        for t in TaskId::ALL {
            let v = Variation::sampled(ObjectSet::InDomain, Split::Train, 3);
            let s = reset_task(&cat, t, &v, 5).unwrap();
            let d: Vec<_> = s.objects.iter().filter(|o| o.role == Role::Distractor).collect();
            assert_eq!(d.len(), 3, "{t}");
            for o in d {
                assert!(DISTRACTOR_CLASSES.contains(&o.model.class.as_str()));
            }
        }
    }
}
