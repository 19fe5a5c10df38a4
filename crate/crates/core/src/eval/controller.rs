//! Closed-loop controllers: the scripted expert, uniform random actions,
//! and learned policies running through the vision pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::obs::{features, raster_features, ObsMode};
use crate::policy::{Policy, PolicyRunner};
use crate::sim::render::Frame;
use crate::sim::{scripted_expert, Action, CameraIntrinsics, SimConfig, WorldState};
use crate::train::dataset::depth_seed;
use crate::vision::{pipeline_first_frame, DepthProvider, PointStream, Reference, TrackerConfig};

pub trait Controller {
    fn method(&self) -> String;
    /// Prepares for a new episode whose first frame is `frame`. An error
    /// aborts the episode as a failure with the returned cause.
    fn reset(&mut self, state: &WorldState, frame: &Frame, seed: u64) -> Result<(), String>;
    fn act(&mut self, state: &WorldState, frame: &Frame) -> Result<Action, String>;
}

/// Privileged scripted expert; an upper bound for the harness.
pub struct ExpertController {
    pub sim: SimConfig,
}

impl Controller for ExpertController {
    fn method(&self) -> String {
        "expert".into()
    }

    fn reset(&mut self, _: &WorldState, _: &Frame, _: u64) -> Result<(), String> {
        Ok(())
    }

    fn act(&mut self, state: &WorldState, _: &Frame) -> Result<Action, String> {
        scripted_expert(state, &self.sim).map_err(|e| e.to_string())
    }
}

/// Uniform translations within the step bound and a coin-flip gripper.
pub struct RandomController {
    pub max_step: f64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(max_step: f64) -> Self {
        Self {
            max_step,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl Controller for RandomController {
    fn method(&self) -> String {
        "random".into()
    }

    fn reset(&mut self, _: &WorldState, _: &Frame, seed: u64) -> Result<(), String> {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0BAD_5EED);
        Ok(())
    }

    fn act(&mut self, _: &WorldState, _: &Frame) -> Result<Action, String> {
        let s = self.max_step;
        let d = [0; 3].map(|_| self.rng.random_range(-s..=s));
        let g = if self.rng.random_bool(0.5) { 1.0 } else { 0.0 };
        Ok(Action::new(d, g))
    }
}

/// A trained policy fed by correspondence, tracking and back-projection
/// (point and graph modes) or by raw rasters (baseline).
pub struct LearnedController<'a> {
    policy: &'a Policy<f32>,
    reference: Option<&'a Reference>,
    camera: CameraIntrinsics,
    tracker: TrackerConfig,
    depth: DepthProvider,
    runner: PolicyRunner<'a, f32>,
    stream: Option<PointStream>,
    pending: Option<Vec<f64>>,
}

impl<'a> LearnedController<'a> {
    pub fn new(
        policy: &'a Policy<f32>,
        reference: Option<&'a Reference>,
        camera: CameraIntrinsics,
        tracker: TrackerConfig,
        depth: DepthProvider,
    ) -> Self {
        Self {
            policy,
            reference,
            camera,
            tracker,
            depth,
            runner: PolicyRunner::new(policy),
            stream: None,
            pending: None,
        }
    }

    pub fn mode(&self) -> ObsMode {
        self.policy.config.mode
    }
}

impl Controller for LearnedController<'_> {
    fn method(&self) -> String {
        match self.mode() {
            ObsMode::Raster => "raster_baseline".into(),
            m => m.as_str().into(),
        }
    }

    fn reset(&mut self, _: &WorldState, frame: &Frame, seed: u64) -> Result<(), String> {
        self.runner.reset();
        self.stream = None;
        self.pending = None;
        if self.mode() == ObsMode::Raster {
            return Ok(());
        }
        let reference = self.reference.ok_or("no reference points")?;
        let first = pipeline_first_frame(reference, frame, &self.camera, self.tracker, depth_seed(self.depth, seed))
            .map_err(|e| format!("correspondence failed: {e}"))?;
        self.pending = Some(features(self.mode(), &first.observation));
        self.stream = Some(first.stream);
        Ok(())
    }

    fn act(&mut self, _: &WorldState, frame: &Frame) -> Result<Action, String> {
        let (obs, blind) = match self.mode() {
            ObsMode::Raster => (raster_features(&frame.raster), false),
            mode => match self.pending.take() {
                Some(first) => (first, false),
                None => {
                    let stream = self.stream.as_mut().ok_or("controller not reset")?;
                    let pts = stream.observe(frame);
                    let blind = pts.valid.iter().all(|v| !v);
                    (features(mode, &pts), blind)
                }
            },
        };
        let obs: Vec<f64> = obs.into_iter().map(|x| x as f32 as f64).collect();
        self.runner.act(&obs, blind).map_err(|e| e.to_string())
    }
}
