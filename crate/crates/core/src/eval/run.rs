//! Closed-loop rollouts and split hygiene.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::controller::Controller;
use super::protocol::EvalProtocol;
use super::report::ResultRow;
use crate::error::EvalError;
use crate::sim::{reset_task, Catalog, DemoDataset, Renderer, SimConfig, TaskId, Variation, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub actions: Vec<[f64; 4]>,
    /// Why the episode ended early, if it did.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub row: ResultRow,
    pub episodes: Vec<EpisodeRecord>,
}

/// Shared simulation context.
#[derive(Debug, Clone)]
pub struct Bench {
    pub catalog: Catalog,
    pub sim: SimConfig,
    pub renderer: Renderer,
}

impl Bench {
    pub fn new(catalog: Catalog, camera: crate::sim::CameraIntrinsics, sim: SimConfig) -> Self {
        let renderer = Renderer::new(camera, catalog.gripper_descriptors());
        Self { catalog, sim, renderer }
    }

    pub fn from_demos(demos: &DemoDataset) -> Self {
        Self::new(demos.header.catalog.clone(), demos.header.camera.clone(), demos.header.sim.clone())
    }

    pub fn reset(&self, task: TaskId, variation: &Variation, seed: u64) -> Result<WorldState, EvalError> {
        Ok(reset_task(&self.catalog, task, variation, seed)?)
    }
}

/// One episode at control rate: render, act, step, until success or the
/// task horizon.
pub fn run_episode(bench: &Bench, controller: &mut dyn Controller, initial: WorldState, seed: u64) -> EpisodeRecord {
    let mut state = initial;
    let mut actions = Vec::new();
    let horizon = state.task.horizon();
    let mut failure = None;
    let first = bench.renderer.render(&state, 0);
    if let Err(cause) = controller.reset(&state, &first, seed) {
        failure = Some(cause);
    } else {
        let mut frame = first;
        for t in 0..horizon {
            if state.progress.success {
                break;
            }
            if t > 0 {
                frame = bench.renderer.render(&state, t);
            }
            match controller.act(&state, &frame) {
                Ok(a) => {
                    actions.push(a.to_array());
                    state = state.step(&a, &bench.sim);
                }
                Err(cause) => {
                    failure = Some(cause);
                    break;
                }
            }
        }
    }
    if let Some(cause) = &failure {
        log::warn!("episode seed {seed} failed: {cause}");
    }
    EpisodeRecord {
        seed,
        success: state.progress.success,
        steps: actions.len(),
        actions,
        failure,
    }
}

fn quantize(p: [f64; 2]) -> (i64, i64) {
    ((p[0] * 1e4).round() as i64, (p[1] * 1e4).round() as i64)
}

/// `(instance, position)` pairs seen in training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub pairs: HashSet<(String, (i64, i64))>,
}

impl Footprint {
    pub fn of_demos(demos: &DemoDataset) -> Self {
        let pairs = demos
            .trajectories
            .iter()
            .map(|t| {
                let (id, p) = t.primary_instance();
                (id, quantize(p))
            })
            .collect();
        Self { pairs }
    }

    pub fn of_state(state: &WorldState) -> Option<(String, (i64, i64))> {
        let (_, o) = state.object_of_class(state.task.primary_class())?;
        Some((o.model.model_id.clone(), quantize([o.pose.x, o.pose.y])))
    }
}

/// Runs every trial of `protocol` with `controller`. With a training
/// footprint, refuses to run if any trial scene was seen in training.
pub fn run_eval(
    bench: &Bench,
    controller: &mut dyn Controller,
    protocol: &EvalProtocol,
    training: Option<&Footprint>,
) -> Result<EvalOutcome, EvalError> {
    let variation = protocol.variation();
    let scenes: Vec<(u64, WorldState)> = protocol
        .trial_seeds()
        .map(|s| bench.reset(protocol.task_id, &variation, s).map(|w| (s, w)))
        .collect::<Result<_, _>>()?;
    if let Some(fp) = training {
        let leaks: Vec<_> = scenes
            .iter()
            .filter_map(|(_, w)| Footprint::of_state(w))
            .filter(|pair| fp.pairs.contains(pair))
            .collect();
        if let Some(first) = leaks.first() {
            return Err(EvalError::SplitLeak {
                count: leaks.len(),
                example: format!("{first:?}"),
            });
        }
    }
    let episodes: Vec<EpisodeRecord> = scenes
        .into_iter()
        .map(|(seed, w)| run_episode(bench, controller, w, seed))
        .collect();
    let row = ResultRow {
        method: controller.method(),
        task: protocol.task_id,
        condition: protocol.condition,
        successes: episodes.iter().filter(|e| e.success).count(),
        trials: episodes.len(),
    };
    log::info!(
        "{} {} {}: {}",
        row.method,
        row.task,
        row.condition,
        row.cell()
    );
    Ok(EvalOutcome { row, episodes })
}
