//! Annotate once, then correspond, track and back-project every demo.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FormatError, TrainError, VisionError};
use crate::policy::obs::{features, raster_features, ObsMode};
use crate::sim::container::{put_json, put_u32, Cursor};
use crate::sim::{Catalog, DemoDataset};
use crate::vision::{pipeline_first_frame, resolve, Annotation, DepthProvider, Reference, TrackerConfig};

pub const PROCESSED_MAGIC: &[u8; 8] = b"PBCPROC\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedTrajectory {
    pub demo_index: usize,
    pub rng_seed: u64,
    /// Encoder input per control step, rounded to `f32` precision.
    #[serde(skip)]
    pub obs: Vec<Vec<f64>>,
    #[serde(skip)]
    pub actions: Vec<[f64; 4]>,
    pub correspondence_scores: Vec<f64>,
    /// Frames each point spent unmeasured by the tracker.
    pub track_loss: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedTrajectory {
    pub demo_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the reference annotation JSON; empty for raster data.
    pub reference_annotation: String,
    pub human_annotations_used: usize,
    pub labels: Vec<String>,
    pub depth: Option<DepthProvider>,
    pub dropped: Vec<DroppedTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedDataset {
    pub task_id: crate::sim::TaskId,
    pub mode: ObsMode,
    pub n_points: usize,
    pub input_dim: usize,
    pub trajectories: Vec<ProcessedTrajectory>,
    pub provenance: Provenance,
    /// Resolved reference points; closed-loop inference corresponds against these.
    pub reference: Option<Reference>,
}

impl ProcessedDataset {
    pub fn n_samples(&self) -> usize {
        self.trajectories.iter().map(|t| t.obs.len()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_json(&mut out, self);
        for t in &self.trajectories {
            put_u32(&mut out, t.obs.len() as u32);
            for (o, a) in t.obs.iter().zip(&t.actions) {
                crate::sim::container::put_f32s(&mut out, o.iter().map(|&v| v as f32));
                crate::sim::container::put_f32s(&mut out, a.iter().map(|&v| v as f32));
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut c = Cursor::new(bytes);
        let mut d: ProcessedDataset = c.json()?;
        for t in d.trajectories.iter_mut() {
            let n = c.u32()? as usize;
            for _ in 0..n {
                t.obs.push(c.f32s(d.input_dim)?.into_iter().map(f64::from).collect());
                let a = c.f32s(4)?;
                t.actions.push([a[0] as f64, a[1] as f64, a[2] as f64, a[3] as f64]);
            }
        }
        Ok(d)
    }

    /// Standalone file: magic followed by the encoded dataset.
    pub fn save(&self, path: &std::path::Path) -> Result<(), FormatError> {
        let mut bytes = PROCESSED_MAGIC.to_vec();
        bytes.extend(self.encode());
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, FormatError> {
        let bytes = std::fs::read(path)?;
        match bytes.strip_prefix(PROCESSED_MAGIC.as_slice()) {
            Some(rest) => Self::decode(rest),
            None => Err(FormatError::BadMagic { expected: "PBCPROC" }),
        }
    }
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

fn round_action(a: [f64; 4]) -> [f64; 4] {
    a.map(|x| x as f32 as f64)
}

pub fn annotation_id(annotation: &Annotation) -> String {
    hex::encode(Sha256::digest(annotation.to_json().as_bytes()))
}

/// Options for [`build_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub mode: ObsMode,
    pub depth: DepthProvider,
    pub tracker: TrackerConfig,
}

impl BuildOptions {
    pub fn new(mode: ObsMode, depth: DepthProvider, catalog: &Catalog) -> Self {
        Self {
            mode,
            depth,
            tracker: TrackerConfig::new(catalog.reject_threshold()),
        }
    }
}

/// Seed of the predicted-depth noise stream for one episode.
pub fn depth_seed(base: DepthProvider, episode_seed: u64) -> DepthProvider {
    DepthProvider {
        seed: base.seed ^ episode_seed.wrapping_mul(0xA24B_AED4_963E_E407),
        ..base
    }
}

/// Turns every demo into encoder inputs using the single `reference`
/// annotation. Demos whose first frame cannot be corresponded are dropped
/// with the reason recorded.
pub fn build_dataset(
    demos: &DemoDataset,
    reference: &Annotation,
    opts: BuildOptions,
) -> Result<ProcessedDataset, TrainError> {
    if opts.mode == ObsMode::Raster {
        return Err(TrainError::ModeMismatch {
            expected: "point or graph".into(),
            found: "raster".into(),
        });
    }
    let cam = &demos.header.camera;
    let src = demos
        .trajectories
        .get(reference.frame_ref.demo_id)
        .and_then(|t| t.frames.get(reference.frame_ref.frame_index))
        .ok_or_else(|| {
            VisionError::InvalidAnnotation(format!(
                "frame {:?} not in dataset of {} demos",
                reference.frame_ref,
                demos.trajectories.len()
            ))
        })?;
    if reference.frame_ref.frame_index != 0 {
        return Err(VisionError::InvalidAnnotation("reference must annotate a first frame".into()).into());
    }
    let resolved = resolve(reference, src, cam.width, cam.height)?;
    let k = resolved.len();
    let mut trajectories = Vec::new();
    let mut dropped = Vec::new();
    for (i, t) in demos.trajectories.iter().enumerate() {
        let Some(first) = t.frames.first() else {
            continue;
        };
        let depth = depth_seed(opts.depth, t.rng_seed);
        let start = match pipeline_first_frame(&resolved, first, cam, opts.tracker, depth) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("demo {i} dropped: {e}");
                dropped.push(DroppedTrajectory {
                    demo_index: i,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let mut stream = start.stream;
        let mut obs = vec![round_f32(features(opts.mode, &start.observation))];
        for f in &t.frames[1..] {
            obs.push(round_f32(features(opts.mode, &stream.observe(f))));
        }
        trajectories.push(ProcessedTrajectory {
            demo_index: i,
            rng_seed: t.rng_seed,
            obs,
            actions: t.actions.iter().map(|a| round_action(a.to_array())).collect(),
            correspondence_scores: start.correspondence.scores(),
            track_loss: stream.tracker.loss_counters(),
        });
    }
    Ok(ProcessedDataset {
        task_id: demos.header.task_id,
        mode: opts.mode,
        n_points: k,
        input_dim: opts.mode.input_dim(k, (0, 0)),
        trajectories,
        provenance: Provenance {
            reference_annotation: annotation_id(reference),
            human_annotations_used: 1,
            labels: reference.labels(),
            depth: Some(opts.depth),
            dropped,
        },
        reference: Some(resolved),
    })
}

/// Raw-raster inputs for the image baseline; no annotation involved.
pub fn build_raster_dataset(demos: &DemoDataset) -> ProcessedDataset {
    let (w, h) = demos
        .trajectories
        .first()
        .and_then(|t| t.frames.first())
        .map(|f| (f.raster.width, f.raster.height))
        .unwrap_or((crate::sim::render::RASTER_SIZE, crate::sim::render::RASTER_SIZE));
    let trajectories = demos
        .trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| ProcessedTrajectory {
            demo_index: i,
            rng_seed: t.rng_seed,
            obs: t.frames.iter().map(|f| round_f32(raster_features(&f.raster))).collect(),
            actions: t.actions.iter().map(|a| round_action(a.to_array())).collect(),
            correspondence_scores: Vec::new(),
            track_loss: Vec::new(),
        })
        .collect();
    ProcessedDataset {
        task_id: demos.header.task_id,
        mode: ObsMode::Raster,
        n_points: 0,
        input_dim: ObsMode::Raster.input_dim(0, (w, h)),
        trajectories,
        provenance: Provenance {
            reference_annotation: String::new(),
            human_annotations_used: 0,
            labels: Vec::new(),
            depth: None,
            dropped: Vec::new(),
        },
        reference: None,
    }
}

/// Scripted stand-in for the single human annotation: labels the default
/// keypoints on the first frame of demo `demo_id`.
pub fn scripted_reference(demos: &DemoDataset, demo_id: usize) -> Result<Annotation, VisionError> {
    use crate::vision::annotation::{default_labels, scripted_annotation};
    use crate::vision::FrameRef;
    let t = demos
        .trajectories
        .get(demo_id)
        .ok_or_else(|| VisionError::InvalidAnnotation(format!("no demo {demo_id}")))?;
    let frame = t
        .frames
        .first()
        .ok_or_else(|| VisionError::InvalidAnnotation(format!("demo {demo_id} has no frames")))?;
    scripted_annotation(
        &t.initial_state,
        frame,
        default_labels(demos.header.task_id),
        FrameRef {
            demo_id,
            frame_index: 0,
        },
    )
}
