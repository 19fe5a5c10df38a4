//! Expert rollouts, 30 Hz capture with 5 Hz subsampling, and the
//! demonstration dataset.

use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::catalog::{Catalog, ObjectSet};
use super::expert::scripted_expert;
use super::render::{Frame, Renderer};
use super::tasks::{reset_task, TaskId, Variation};
use super::world::{Action, EndEffectorState, SimConfig, WorldState};
use crate::error::SimError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub task_id: TaskId,
    pub control_hz: u32,
    pub capture_hz: u32,
    pub descriptor_dim: usize,
    pub camera: CameraIntrinsics,
    pub sim: SimConfig,
    pub catalog: Catalog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: TaskId,
    pub rng_seed: u64,
    pub variation: Variation,
    pub initial_state: WorldState,
    pub frames: Vec<Frame>,
    pub ee_states: Vec<EndEffectorState>,
    pub actions: Vec<Action>,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Model id and planar position of the primary object at reset.
    pub fn primary_instance(&self) -> (String, [f64; 2]) {
        let (_, o) = self
            .initial_state
            .object_of_class(self.task.primary_class())
            .expect("primary object");
        (o.model.model_id.clone(), [o.pose.x, o.pose.y])
    }

    /// Re-executes the recorded actions from the initial state.
    pub fn replay(&self, cfg: &SimConfig) -> Vec<EndEffectorState> {
        let mut s = self.initial_state.clone();
        let mut out = Vec::with_capacity(self.actions.len());
        for a in &self.actions {
            out.push(s.ee);
            s = s.step(a, cfg);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
    /// Seeds whose expert rollout failed and were skipped.
    pub failed_seeds: Vec<u64>,
}

/// Keeps every `factor`-th item starting with the first.
pub fn subsample<T: Clone>(items: &[T], factor: usize) -> Vec<T> {
    items.iter().step_by(factor.max(1)).cloned().collect()
}

/// Full-rate capture of one expert episode.
#[derive(Debug, Clone)]
pub struct Capture {
    pub frames: Vec<Frame>,
    pub control: Vec<(EndEffectorState, Action)>,
    pub final_state: WorldState,
}

/// Runs the expert at control rate, rendering a frame before every physics
/// tick (capture rate).
pub fn capture_expert_episode(
    renderer: &Renderer,
    cfg: &SimConfig,
    initial: WorldState,
) -> Result<Capture, SimError> {
    let mut s = initial;
    let mut frames = Vec::new();
    let mut control = Vec::new();
    for _ in 0..s.task.horizon() {
        if s.progress.success {
            break;
        }
        let a = scripted_expert(&s, cfg)?;
        control.push((s.ee, a));
        s = s.step_observed(&a, cfg, |tick_state| {
            let index = frames.len();
            frames.push(renderer.render(tick_state, index));
        });
    }
    Ok(Capture {
        frames,
        control,
        final_state: s,
    })
}

pub fn record_episode(
    catalog: &Catalog,
    renderer: &Renderer,
    cfg: &SimConfig,
    task: TaskId,
    variation: &Variation,
    seed: u64,
) -> Result<Trajectory, SimError> {
    let initial = reset_task(catalog, task, variation, seed)?;
    let capture = capture_expert_episode(renderer, cfg, initial.clone()).map_err(|e| match e {
        SimError::ExpertFailure { task, reason, .. } => SimError::ExpertFailure { task, seed, reason },
        other => other,
    })?;
    let factor = (cfg.capture_hz / cfg.control_hz.max(1)).max(1) as usize;
    let mut frames = subsample(&capture.frames, factor);
    for (t, f) in frames.iter_mut().enumerate() {
        f.frame_index = t;
    }
    let (ee_states, actions) = capture.control.into_iter().unzip();
    Ok(Trajectory {
        task,
        rng_seed: seed,
        variation: variation.clone(),
        initial_state: initial,
        frames,
        ee_states,
        actions,
        success: capture.final_state.progress.success,
    })
}

/// Records `n_demos` successful expert demonstrations on the training split.
///
/// Instances cycle through the in-domain set so every object gets the same
/// number of demos. A failed rollout is logged and retried with the next
/// seed.
pub fn record_demos(
    catalog: &Catalog,
    camera: &CameraIntrinsics,
    cfg: &SimConfig,
    task: TaskId,
    n_demos: usize,
    seed: u64,
) -> Result<DemoDataset, SimError> {
    let renderer = Renderer::new(camera.clone(), catalog.gripper_descriptors());
    let n_instances = catalog.instances(task.primary_class(), ObjectSet::InDomain).len().max(1);
    let mut trajectories = Vec::with_capacity(n_demos);
    let mut failed_seeds = Vec::new();
    let mut next_seed = seed;
    while trajectories.len() < n_demos {
        let mut variation = Variation::train();
        variation.instance = Some(trajectories.len() % n_instances);
        let s = next_seed;
        next_seed = next_seed.wrapping_add(1);
        match record_episode(catalog, &renderer, cfg, task, &variation, s) {
            Ok(t) if t.success => trajectories.push(t),
            Ok(_) => {
                log::warn!("expert did not finish {task} within horizon (seed {s}); retrying");
                failed_seeds.push(s);
            }
            Err(e @ SimError::ExpertFailure { .. }) => {
                log::warn!("{e}; retrying");
                failed_seeds.push(s);
            }
            Err(e) => return Err(e),
        }
        if failed_seeds.len() > 10 * n_demos.max(10) {
            return Err(SimError::ExpertFailure {
                task: task.to_string(),
                seed: s,
                reason: format!("{} consecutive failures", failed_seeds.len()),
            });
        }
    }
    if !failed_seeds.is_empty() {
        log::info!("{task}: {} expert failures skipped", failed_seeds.len());
    }
    Ok(DemoDataset {
        header: DatasetHeader {
            format_version: FORMAT_VERSION,
            task_id: task,
            control_hz: cfg.control_hz,
            capture_hz: cfg.capture_hz,
            descriptor_dim: catalog.descriptor_dim,
            camera: camera.clone(),
            sim: cfg.clone(),
            catalog: catalog.clone(),
        },
        trajectories,
        failed_seeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsample_length_is_ceil() {
        for n in 0..40usize {
            let v: Vec<usize> = (0..n).collect();
            let s = subsample(&v, 6);
            assert_eq!(s.len(), n.div_ceil(6));
            assert!(s.iter().all(|i| i % 6 == 0));
        }
        let sixty: Vec<usize> = (0..60).collect();
        assert_eq!(subsample(&sixty, 6).len(), 10);
    }

    #[test]
    fn zero_demos_gives_empty_dataset_with_header() {
        let cat = Catalog::standard();
        let d = record_demos(&cat, &CameraIntrinsics::tabletop(), &SimConfig::default(), TaskId::PickObject, 0, 1)
            .unwrap();
        assert!(d.trajectories.is_empty());
        assert_eq!(d.header.task_id, TaskId::PickObject);
        assert_eq!(d.header.control_hz, 5);
    }
}
