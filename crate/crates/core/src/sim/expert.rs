//! Scripted waypoint-following expert.
//!
//! The expert is a pure function of the world state: each call inspects
//! what is held and where the relevant keypoints are, picks the current
//! waypoint and steps toward it with a saturated proportional law
//! (unit gain, so it lands exactly once within `max_step`).

use nalgebra::{Point3, Vector3};

use super::tasks::{board_half_width, TaskId};
use super::world::{Action, SimConfig, WorldState};
use crate::error::SimError;

/// Waypoint reached when closer than this (meters).
const REACHED: f64 = 0.002;
const APPROACH_HEIGHT: f64 = 0.07;
const OPEN: f64 = 1.0;
const CLOSED: f64 = 0.0;

fn toward(from: &Point3<f64>, to: &Point3<f64>, max_step: f64, gripper: f64) -> Action {
    let mut d: Vector3<f64> = to - from;
    let n = d.norm();
    if n > max_step {
        d *= max_step / n;
    }
    Action::new([d.x, d.y, d.z], gripper)
}

fn planar_distance(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Approach from above and close on `grasp`; `None` once the object is held.
fn reach_and_grasp(state: &WorldState, object: usize, cfg: &SimConfig) -> Result<Option<Action>, SimError> {
    if state.held_index() == Some(object) {
        return Ok(None);
    }
    let ee = state.ee.point();
    if state.ee.gripper < cfg.grasp_threshold {
        // closed on nothing: reopen and retry
        return Ok(Some(Action::hold(OPEN)));
    }
    let grasp = state.objects[object]
        .grasp_point()
        .ok_or_else(|| failure(state, "object has no grasp point"))?;
    for axis in 0..3 {
        let c = grasp[axis];
        if c < cfg.ee_min[axis] || c > cfg.ee_max[axis] {
            return Err(failure(state, "grasp point outside reachable workspace"));
        }
    }
    let above = grasp + Vector3::new(0.0, 0.0, APPROACH_HEIGHT);
    if planar_distance(&ee, &grasp) > REACHED {
        // climb back to the approach height before any planar travel
        let target = if ee.z < grasp.z + 0.5 * APPROACH_HEIGHT && planar_distance(&ee, &grasp) > 0.02 {
            Point3::new(ee.x, ee.y, above.z)
        } else {
            above
        };
        return Ok(Some(toward(&ee, &target, cfg.max_step, OPEN)));
    }
    if (ee.z - grasp.z).abs() > REACHED {
        return Ok(Some(toward(&ee, &grasp, cfg.max_step, OPEN)));
    }
    Ok(Some(Action::hold(CLOSED)))
}

fn failure(state: &WorldState, reason: &str) -> SimError {
    SimError::ExpertFailure {
        task: state.task.to_string(),
        seed: 0,
        reason: reason.to_string(),
    }
}

/// Next expert action for `state`.
pub fn scripted_expert(state: &WorldState, cfg: &SimConfig) -> Result<Action, SimError> {
    let task = state.task;
    let (primary, _) = state
        .object_of_class(task.primary_class())
        .ok_or_else(|| failure(state, "primary object missing"))?;
    let ee = state.ee.point();
    let step = cfg.max_step;

    if state.progress.success {
        return Ok(Action::hold(if state.held_index().is_some() { CLOSED } else { OPEN }));
    }

    // placing releases the object, so a finished placement must not regrasp
    if task == TaskId::ObjectOnTarget && state.held_index().is_none() {
        let (_, plate) = state.object_of_class("plate").ok_or_else(|| failure(state, "no plate"))?;
        let mug = &state.objects[primary];
        if (mug.z_height - (plate.z_height + mug.model.height)).abs() < 1e-9 {
            let up = Point3::new(ee.x, ee.y, ee.z + step);
            return Ok(toward(&ee, &up, step, OPEN));
        }
    }

    if let Some(a) = reach_and_grasp(state, primary, cfg)? {
        return Ok(a);
    }
    let held = state.ee.held.expect("held after reach_and_grasp");
    let obj = &state.objects[primary];

    let action = match task {
        TaskId::PickObject | TaskId::LiftFromRack => {
            let lift = obj.rest_z + LIFT_TARGET - (obj.z_height - ee.z);
            toward(&ee, &Point3::new(ee.x, ee.y, lift), step, CLOSED)
        }
        TaskId::TakeOut => {
            let rack_front = state.layout.rack.map(|r| r.min[1]).unwrap_or(0.0);
            let y = rack_front - 0.09 - held.offset[1];
            let z = obj.rest_z + 0.02 - held.offset[2];
            toward(&ee, &Point3::new(ee.x, y, z), step, CLOSED)
        }
        TaskId::ObjectOnTarget => {
            let (_, plate) = state.object_of_class("plate").ok_or_else(|| failure(state, "no plate"))?;
            let target_x = plate.pose.x - held.offset[0];
            let target_y = plate.pose.y - held.offset[1];
            let rest = plate.z_height + obj.model.height;
            let carry = rest + 0.06 - held.offset[2];
            let place = rest + 0.004 - held.offset[2];
            let over = Point3::new(target_x, target_y, carry);
            if planar_distance(&ee, &over) > REACHED {
                let z = if ee.z < carry - REACHED { carry } else { ee.z.max(carry) };
                toward(&ee, &Point3::new(target_x, target_y, z), step, CLOSED)
            } else if ee.z - place > REACHED {
                toward(&ee, &Point3::new(target_x, target_y, place), step, CLOSED)
            } else {
                Action::hold(OPEN)
            }
        }
        TaskId::Sweep => {
            let (_, board) = state.object_of_class("board").ok_or_else(|| failure(state, "no board"))?;
            let head = obj
                .keypoint_world_by_label("broom_head")
                .ok_or_else(|| failure(state, "broom has no head"))?;
            let head_offset = head - ee;
            let half_w = board_half_width(board);
            let low = board.z_height + 0.015;
            let start = Point3::new(board.pose.x - half_w - 0.02, board.pose.y, low);
            let end = Point3::new(board.pose.x + half_w + 0.02, board.pose.y, low);
            let sweeping = state.progress.sweep_range.is_some() || (head - start).norm() <= REACHED;
            let head_target = if sweeping {
                end
            } else if planar_distance(&head, &start) > REACHED {
                Point3::new(start.x, start.y, low + 0.04)
            } else {
                start
            };
            toward(&ee, &(head_target - head_offset), step, CLOSED)
        }
        TaskId::OpenDoor => {
            let yaw_target = (obj.pose.yaw - 20f64.to_radians()).max(-75f64.to_radians());
            let handle = obj
                .model
                .grasp_keypoint()
                .ok_or_else(|| failure(state, "door has no handle"))?;
            let radius = handle.position[0].hypot(handle.position[1]);
            let angle = yaw_target + held.hinge_angle;
            let target = Point3::new(
                obj.pose.x + radius * angle.cos(),
                obj.pose.y + radius * angle.sin(),
                ee.z,
            );
            toward(&ee, &target, step, CLOSED)
        }
    };
    Ok(action)
}

/// Lift target above the rest height, measured at the object's top surface.
const LIFT_TARGET: f64 = 0.15;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::catalog::{Catalog, ObjectSet};
    use crate::sim::tasks::{reset_task, Positions, Variation};

    fn at_grasp_pose() -> (WorldState, SimConfig) {
        let cat = Catalog::standard();
        let v = Variation {
            object_set: ObjectSet::InDomain,
            instance: Some(0),
            positions: Positions::Explicit(vec![[0.4, 0.05]]),
            distractors: 0,
        };
        let mut s = reset_task(&cat, TaskId::PickObject, &v, 1).unwrap();
        let g = s.objects[0].grasp_point().unwrap();
        s.ee.position = [g.x, g.y, g.z];
        (s, SimConfig::default())
    }

    #[test]
    fn closes_gripper_at_grasp_pose() {
        let (s, cfg) = at_grasp_pose();
        let a = scripted_expert(&s, &cfg).unwrap();
        assert_eq!(a, Action::hold(CLOSED));
        let next = s.step(&a, &cfg);
        assert_eq!(next.held_index(), Some(0));
    }

    #[test]
    fn actions_respect_step_bound() {
        let cat = Catalog::standard();
        let cfg = SimConfig::default();
        for task in TaskId::ALL {
            let mut s = reset_task(&cat, task, &Variation::train(), 4).unwrap();
            for _ in 0..task.horizon() {
                let a = scripted_expert(&s, &cfg).unwrap();
                assert!(a.delta_position.iter().all(|d| d.abs() <= cfg.max_step + 1e-12));
                assert!((0.0..=1.0).contains(&a.gripper_command));
                s = s.step(&a, &cfg);
            }
        }
    }

    #[test]
    fn unreachable_grasp_is_a_failure() {
        let (mut s, mut cfg) = at_grasp_pose();
        s.ee.position = crate::sim::tasks::HOME;
        cfg.ee_max[0] = 0.3;
        assert!(matches!(scripted_expert(&s, &cfg), Err(SimError::ExpertFailure { .. })));
    }
}
