//! Acceptance suite. Each test prints one `PASS`/`FAIL` line per criterion
//! to stderr (uncaptured) and fails if any of its criteria fail. Tests run
//! one at a time so runtime bounds are measured on an idle CPU; trained
//! policies and evaluation outcomes are shared between tests.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use nalgebra::Point3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pointbc::app::manifest::file_hash;
use pointbc::app::{RunConfig, RunManifest};
use pointbc::eval::{run_eval, Bench, Condition, EpisodeRecord, EvalOutcome, Footprint, LearnedController};
use pointbc::policy::{ensemble_weights, masked_mse, temporal_ensemble, Normalizer, ObsMode, Policy, PolicyConfig};
use pointbc::sim::catalog::Descriptor;
use pointbc::sim::render::{DepthImage, RasterImage};
use pointbc::sim::{record_demos, CameraIntrinsics, Catalog, DemoDataset, Frame, KeypointId, ProjectedPoint, SimConfig, TaskId};
use pointbc::train::{build_dataset, build_raster_dataset, scripted_reference, train, BuildOptions, TrainConfig};
use pointbc::vision::{
    back_project_pixel, correspond, resolve, Annotation, AnnotationPoint, AnnotationSource, DepthProvider, FrameRef,
    Reference, Tracker, TrackerConfig,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

struct Criteria {
    group: &'static str,
    failed: Vec<String>,
}

impl Criteria {
    fn new(group: &'static str) -> Self {
        Self {
            group,
            failed: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        let line = format!("{} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" }, self.group);
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        if !pass {
            self.failed.push(format!("{name}: {detail}"));
        }
    }

    fn note(&self, detail: String) {
        let line = format!("INFO [{}] {detail}\n", self.group);
        std::io::stderr().write_all(line.as_bytes()).unwrap();
    }

    fn finish(self) {
        assert!(self.failed.is_empty(), "failed criteria:\n{}", self.failed.join("\n"));
    }
}

// ---------------------------------------------------------------- geometry

#[test]
fn geometry_round_trip() {
    let _g = serial();
    let mut c = Criteria::new("geometry");
    let cam = CameraIntrinsics::tabletop();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z = rng.random_range(0.2..3.0);
        let u = rng.random_range(0.0..cam.width as f64);
        let v = rng.random_range(0.0..cam.height as f64);
        let world = cam.camera_to_world(&Point3::new((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z));
        let px = cam.project(&world).unwrap();
        let back = back_project_pixel(&cam, px.u, px.v, px.z).unwrap();
        let back_world = cam.camera_to_world(&Point3::new(back[0], back[1], back[2]));
        worst = worst.max((back_world - world).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    c.check("project/back_project identity on 1000 points", worst <= 1e-9, format!("max error {worst:.2e} m (bound 1e-9)"));
    c.check("geometry runtime", secs < 1.0, format!("{secs:.4} s (bound 1 s)"));
    c.finish();
}

// --------------------------------------------------------------- gradients

fn tiny_policy() -> Policy<f64> {
    let config = PolicyConfig {
        mode: ObsMode::Point,
        n_points: 4,
        input_dim: ObsMode::Point.input_dim(4, (0, 0)),
        encoder_hidden: 16,
        width: 16,
        layers: 2,
        heads: 2,
        history: 3,
        chunk: 2,
        ensemble_decay: 0.1,
    };
    let mut p = Policy::<f64>::new(config, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t in p.params.iter_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
    }
    p.obs_norm = Normalizer {
        mean: (0..16).map(|i| 0.05 * i as f64).collect(),
        std: (0..16).map(|i| 0.6 + 0.03 * i as f64).collect(),
    };
    p
}

#[test]
fn gradient_suite() {
    let _g = serial();
    let mut c = Criteria::new("gradients");
    let start = Instant::now();
    let mut p = tiny_policy();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let seq = 3;
    let x = Array2::from_shape_simple_fn((2 * seq, 16), || rng.random_range(-1.5..1.5));
    let target = Array2::from_shape_simple_fn((2 * seq, 8), || rng.random_range(-1.0..1.0));
    let mask = Array2::from_shape_fn((2 * seq, 8), |(i, j)| if (i + 2 * j) % 7 == 3 { 0.0 } else { 1.0 });
    let loss = |p: &Policy<f64>| masked_mse(&p.forward(&x, seq).unwrap().0, &target, &mask).0;

    let (out, cache) = p.forward(&x, seq).unwrap();
    let (_, dout) = masked_mse(&out, &target, &mask);
    let mut grads = p.zeros_like();
    p.backward(&cache, &dout, &mut grads);

    let h = 1e-5;
    let mut worst = (0.0f64, String::new());
    for ti in 0..p.params.len() {
        let mut num = Array2::<f64>::zeros(p.params[ti].raw_dim());
        for idx in 0..p.params[ti].len() {
            let orig = p.params[ti].as_slice().unwrap()[idx];
            p.params[ti].as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&p);
            p.params[ti].as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&p);
            p.params[ti].as_slice_mut().unwrap()[idx] = orig;
            num.as_slice_mut().unwrap()[idx] = (lp - lm) / (2.0 * h);
        }
        let norm = |a: &Array2<f64>| a.mapv(|v| v * v).sum().sqrt();
        let rel = norm(&(&num - &grads[ti])) / norm(&num).max(norm(&grads[ti])).max(f64::MIN_POSITIVE);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, p.names[ti].clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    c.check(
        "analytic vs central-difference gradients, every tensor",
        worst.0 <= 1e-4,
        format!("{} tensors, worst relative error {:.2e} ({}) (bound 1e-4)", p.params.len(), worst.0, worst.1),
    );
    c.check("gradient suite runtime", secs < 120.0, format!("{secs:.2} s (bound 120 s)"));
    c.finish();
}

// ---------------------------------------------------------------- ensemble

#[test]
fn temporal_ensemble_closed_forms() {
    let _g = serial();
    let mut c = Criteria::new("ensemble");
    let w = ensemble_weights(&[0, 1, 2, 3, 4], 0.0);
    let err0 = w.iter().map(|v| (v - 0.2).abs()).fold(0.0, f64::max);
    c.check("m=0 weights are uniform", err0 <= 1e-12, format!("max error {err0:.1e} (bound 1e-12)"));

    let a0 = [1.0, 2.0, -3.0, 0.5];
    let a1 = [-1.0, 0.5, 4.0, 0.0];
    let got = temporal_ensemble(&[(0, a0), (1, a1)], 1.0);
    let e = (-1.0f64).exp();
    let err1 = (0..4).map(|i| (got[i] - (a0[i] + e * a1[i]) / (1.0 + e)).abs()).fold(0.0, f64::max);
    c.check("m=1 two-prediction closed form", err1 <= 1e-12, format!("max error {err1:.1e} (bound 1e-12)"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..16);
        let ages: Vec<usize> = (0..n).map(|_| rng.random_range(0..30)).collect();
        let m = rng.random_range(0.0..4.0);
        worst_sum = worst_sum.max((ensemble_weights(&ages, m).iter().sum::<f64>() - 1.0).abs());
    }
    c.check("weights sum to 1", worst_sum <= 1e-12, format!("max |sum-1| {worst_sum:.1e} over 1000 random cases"));
    c.finish();
}

// ---------------------------------------------------------- annotate once

#[test]
fn single_annotation_pipeline() {
    let _g = serial();
    let mut c = Criteria::new("single-annotation");
    let d = record_demos(&Catalog::standard(), &CameraIntrinsics::tabletop(), &SimConfig::default(), TaskId::PickObject, 24, 100)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotation.json");
    std::fs::write(&path, scripted_reference(&d, 0).unwrap().to_json()).unwrap();
    let annotation = Annotation::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let data = build_dataset(&d, &annotation, BuildOptions::new(ObsMode::Point, DepthProvider::camera(), &d.header.catalog)).unwrap();
    c.check(
        "24-demo dataset consumes one annotation",
        data.provenance.human_annotations_used == 1 && data.trajectories.len() == 24,
        format!(
            "annotations used {}, trajectories {} of 24, dropped {}",
            data.provenance.human_annotations_used,
            data.trajectories.len(),
            data.provenance.dropped.len()
        ),
    );
    c.finish();
}

// ---------------------------------------------------------------- tracking

fn desc(seed: u64) -> Descriptor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Descriptor::new((0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).normalized()
}

fn synthetic_frame(index: usize, points: &[(usize, [f64; 2], bool)]) -> Frame {
    Frame {
        frame_index: index,
        points: points
            .iter()
            .map(|&(i, [u, v], visible)| ProjectedPoint {
                id: KeypointId { object: Some(0), index: i },
                u,
                v,
                z: 1.0,
                visible,
                descriptor: desc(i as u64),
            })
            .collect(),
        raster: RasterImage {
            width: 0,
            height: 0,
            rgb: Vec::new(),
        },
        depth: DepthImage {
            width: 0,
            height: 0,
            values: Vec::new(),
        },
    }
}

fn tracker_on(frame: &Frame) -> Tracker {
    let ann = Annotation {
        task_id: TaskId::PickObject,
        frame_ref: FrameRef {
            demo_id: 0,
            frame_index: 0,
        },
        points: frame
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| AnnotationPoint {
                label: format!("obj_p{i}"),
                u: p.u,
                v: p.v,
            })
            .collect(),
        created_by: AnnotationSource::File,
    };
    let reference = resolve(&ann, frame, 512, 512).unwrap();
    Tracker::init(TrackerConfig::new(0.3), &correspond(&reference, frame, 0.3).unwrap())
}

#[test]
fn tracking_properties() {
    let _g = serial();
    let mut c = Criteria::new("tracking");
    let at = |i: usize, hidden: bool| -> Vec<(usize, [f64; 2], bool)> {
        vec![
            (0, [100.0 + 3.0 * i as f64, 200.0 + 0.5 * i as f64], !hidden),
            (1, [300.0, 300.0 - 2.0 * i as f64], true),
        ]
    };
    let mut t = tracker_on(&synthetic_frame(0, &at(0, false)));
    let mut reacquire_err = f64::INFINITY;
    let mut flags_ok = true;
    for i in 1..=20 {
        let hidden = (6..11).contains(&i);
        let truth = at(i, hidden);
        let row = t.step(&synthetic_frame(i, &truth));
        flags_ok &= row[0].visible != hidden;
        if i == 11 {
            reacquire_err = (row[0].u - truth[0].1[0]).hypot(row[0].v - truth[0].1[1]);
        }
    }
    c.check(
        "5-frame occlusion is re-acquired within 1 px",
        flags_ok && reacquire_err <= 1.0 && t.points[0].reacquisitions == 1,
        format!("error at re-acquisition {reacquire_err:.3} px, visibility flags correct: {flags_ok}"),
    );

    let base = [[100.0, 120.0], [300.0, 310.0], [200.0, 50.0], [140.0, 400.0]];
    let rigid = |i: usize| -> Vec<(usize, [f64; 2], bool)> {
        base.iter()
            .enumerate()
            .map(|(k, b)| (k, [b[0] + 2.5 * i as f64, b[1] + 1.25 * i as f64], true))
            .collect()
    };
    let mut t = tracker_on(&synthetic_frame(0, &rigid(0)));
    let mut worst: f64 = 0.0;
    for i in 1..60 {
        let truth = rigid(i);
        for (r, p) in t.step(&synthetic_frame(i, &truth)).iter().zip(&truth) {
            worst = worst.max((r.u - p.1[0]).hypot(r.v - p.1[1]));
        }
    }
    c.check("rigid motion tracked exactly", worst <= 1e-6, format!("max error {worst:.1e} px over 59 frames (bound 1e-6)"));
    c.finish();
}

// ------------------------------------------------------ policy benchmarks

const ACCEPTANCE_STEPS: usize = 3000;

fn run_config(task: TaskId) -> RunConfig {
    let defaults = RunConfig::default();
    RunConfig {
        task,
        train: TrainConfig {
            steps: ACCEPTANCE_STEPS,
            ..defaults.train.clone()
        },
        ..defaults
    }
}

struct Scenes {
    cfg: RunConfig,
    demos: DemoDataset,
    bench: Bench,
    footprint: Footprint,
    annotation: Annotation,
    seconds: f64,
}

impl Scenes {
    fn new(task: TaskId) -> Self {
        let cfg = run_config(task);
        let start = Instant::now();
        let demos = record_demos(
            &Catalog::standard(),
            &CameraIntrinsics::tabletop(),
            &SimConfig::default(),
            task,
            cfg.demos.n_demos,
            cfg.demos.seed,
        )
        .unwrap();
        let annotation = scripted_reference(&demos, cfg.data.reference_demo).unwrap();
        Self {
            bench: Bench::from_demos(&demos),
            footprint: Footprint::of_demos(&demos),
            annotation,
            seconds: start.elapsed().as_secs_f64(),
            cfg,
            demos,
        }
    }

    fn train(&self, mode: ObsMode, depth: DepthProvider) -> Trained {
        let start = Instant::now();
        let data = match mode {
            ObsMode::Raster => build_raster_dataset(&self.demos),
            _ => build_dataset(&self.demos, &self.annotation, BuildOptions::new(mode, depth, &self.demos.header.catalog)).unwrap(),
        };
        let out = train(&data, &self.cfg.train).unwrap();
        Trained {
            policy: out.policy,
            reference: data.reference,
            seconds: start.elapsed().as_secs_f64(),
        }
    }

    fn eval(&self, t: &Trained, condition: Condition) -> Evaluated {
        let protocol = self.cfg.protocol(condition);
        let start = Instant::now();
        let mut c = LearnedController::new(
            &t.policy,
            t.reference.as_ref(),
            self.demos.header.camera.clone(),
            TrackerConfig::new(self.demos.header.catalog.reject_threshold()),
            protocol.depth(),
        );
        let outcome = run_eval(&self.bench, &mut c, &protocol, Some(&self.footprint)).unwrap();
        Evaluated {
            outcome,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

struct Trained {
    policy: Policy<f32>,
    reference: Option<Reference>,
    seconds: f64,
}

struct Evaluated {
    outcome: EvalOutcome,
    seconds: f64,
}

impl Evaluated {
    fn rate(&self) -> f64 {
        100.0 * self.outcome.row.rate()
    }

    fn cell(&self) -> String {
        format!("{} ({:.0}%)", self.outcome.row.cell(), self.rate())
    }
}

macro_rules! shared {
    ($name:ident: $ty:ty = $init:expr) => {
        fn $name() -> &'static $ty {
            static CELL: OnceLock<$ty> = OnceLock::new();
            CELL.get_or_init(|| $init)
        }
    };
}

shared!(pick: Scenes = Scenes::new(TaskId::PickObject));
shared!(lift: Scenes = Scenes::new(TaskId::LiftFromRack));
shared!(pick_point: Trained = pick().train(ObsMode::Point, DepthProvider::camera()));
shared!(pick_baseline: Trained = pick().train(ObsMode::Raster, DepthProvider::camera()));
shared!(pick_point_predicted: Trained = pick().train(ObsMode::Point, pick().cfg.predicted_depth()));
shared!(pick_graph: Trained = pick().train(ObsMode::Graph, DepthProvider::camera()));
shared!(lift_point: Trained = lift().train(ObsMode::Point, DepthProvider::camera()));
shared!(lift_graph: Trained = lift().train(ObsMode::Graph, DepthProvider::camera()));
shared!(pick_point_in: Evaluated = pick().eval(pick_point(), Condition::InDomain));
shared!(pick_point_novel: Evaluated = pick().eval(pick_point(), Condition::NovelInstance));
shared!(pick_point_distractor: Evaluated = pick().eval(pick_point(), Condition::Distractor));
shared!(pick_baseline_in: Evaluated = pick().eval(pick_baseline(), Condition::InDomain));
shared!(pick_baseline_novel: Evaluated = pick().eval(pick_baseline(), Condition::NovelInstance));

#[test]
fn in_domain_point_vs_baseline() {
    let _g = serial();
    let mut c = Criteria::new("in-domain");
    let (point, baseline) = (pick_point_in(), pick_baseline_in());
    c.check("point policy ≥90% over 50 held-out positions", point.rate() >= 90.0, point.cell());
    c.check("raster baseline ≥60% over 50 held-out positions", baseline.rate() >= 60.0, baseline.cell());
    c.check(
        "ordering point ≥ baseline",
        point.rate() >= baseline.rate(),
        format!("{:.0}% vs {:.0}%", point.rate(), baseline.rate()),
    );
    let s = pick();
    let total = s.seconds + pick_point().seconds + pick_baseline().seconds + point.seconds + baseline.seconds;
    c.check(
        "runtime ≤30 min CPU",
        total <= 1800.0,
        format!(
            "{total:.0} s total: demos {:.0} s, point train {:.0} s, baseline train {:.0} s, evals {:.0} s + {:.0} s ({ACCEPTANCE_STEPS} steps)",
            s.seconds,
            pick_point().seconds,
            pick_baseline().seconds,
            point.seconds,
            baseline.seconds
        ),
    );
    c.finish();
}

#[test]
fn novel_instance_generalization() {
    let _g = serial();
    let mut c = Criteria::new("novel-instance");
    let (p_in, p_novel) = (pick_point_in(), pick_point_novel());
    let (b_in, b_novel) = (pick_baseline_in(), pick_baseline_novel());
    let p_drop = p_in.rate() - p_novel.rate();
    let b_drop = b_in.rate() - b_novel.rate();
    c.check(
        "point drop ≤10 pp",
        p_drop <= 10.0,
        format!("{} -> {}, drop {p_drop:.0} pp", p_in.cell(), p_novel.cell()),
    );
    c.check(
        "baseline drop ≥20 pp",
        b_drop >= 20.0,
        format!("{} -> {}, drop {b_drop:.0} pp", b_in.cell(), b_novel.cell()),
    );
    let gap = p_novel.rate() - b_novel.rate();
    c.check("point > baseline by ≥25 pp on novel instances", gap >= 25.0, format!("gap {gap:.0} pp"));
    c.finish();
}

fn action_bits(e: &EpisodeRecord) -> Vec<u64> {
    e.actions.iter().flatten().map(|v| v.to_bits()).collect()
}

#[test]
fn distractor_invariance() {
    let _g = serial();
    let mut c = Criteria::new("distractor");
    let (clean, cluttered) = (pick_point_in(), pick_point_distractor());
    let distractors = pick().cfg.eval.distractors;
    let differing: Vec<u64> = clean
        .outcome
        .episodes
        .iter()
        .zip(&cluttered.outcome.episodes)
        .filter(|(a, b)| a.seed != b.seed || action_bits(a) != action_bits(b))
        .map(|(a, _)| a.seed)
        .collect();
    c.check(
        &format!("point actions bit-identical with {distractors} distractors"),
        differing.is_empty() && clean.outcome.episodes.len() == cluttered.outcome.episodes.len(),
        format!("{} episodes compared, {} differ {:?}", clean.outcome.episodes.len(), differing.len(), differing),
    );
    c.check(
        "point success unchanged",
        clean.outcome.row.successes == cluttered.outcome.row.successes,
        format!("clean {} vs distractors {}", clean.cell(), cluttered.cell()),
    );
    let b = pick().eval(pick_baseline(), Condition::Distractor);
    c.note(format!("raster baseline with distractors (no bound): {}", b.cell()));
    c.finish();
}

#[test]
fn predicted_depth_parity() {
    let _g = serial();
    let mut c = Criteria::new("depth");
    let camera = pick_point_in();
    let predicted = pick().eval(pick_point_predicted(), Condition::DepthPredicted);
    let gap = (camera.rate() - predicted.rate()).abs();
    let d = pick().cfg.predicted_depth();
    c.check(
        "predicted depth within 10 pp of camera depth",
        gap <= 10.0,
        format!("camera {} vs predicted {} ({d:?}), gap {gap:.0} pp", camera.cell(), predicted.cell()),
    );
    c.finish();
}

#[test]
fn graph_prior_parity() {
    let _g = serial();
    let mut c = Criteria::new("graph");
    let pick_point_rate = pick_point_in();
    let pick_graph_rate = pick().eval(pick_graph(), Condition::GraphPrior);
    let lift_point_rate = lift().eval(lift_point(), Condition::InDomain);
    let lift_graph_rate = lift().eval(lift_graph(), Condition::GraphPrior);
    for (task, point, graph) in [
        (TaskId::PickObject, pick_point_rate, &pick_graph_rate),
        (TaskId::LiftFromRack, &lift_point_rate, &lift_graph_rate),
    ] {
        let gap = (point.rate() - graph.rate()).abs();
        c.check(
            &format!("{task}: graph within ±15 pp of point"),
            gap <= 15.0,
            format!("point {} vs graph {}, gap {gap:.0} pp", point.cell(), graph.cell()),
        );
    }
    c.finish();
}

// ------------------------------------------------------------ determinism

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn commands_are_deterministic() {
    let _g = serial();
    let mut c = Criteria::new("determinism");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml");
    let dir = tempfile::tempdir().unwrap();
    let proto = dir.path().join("proto.toml");
    std::fs::write(&proto, "task_id = \"pick_object\"\ncondition = \"novel_instance\"\nn_trials = 4\n").unwrap();
    let roots = [dir.path().join("a"), dir.path().join("b")];
    for root in &roots {
        let run = |args: &[&str]| {
            let o = Command::new(env!("CARGO_BIN_EXE_pointbc"))
                .args(args)
                .args(["--config", config.to_str().unwrap(), "--out", root.to_str().unwrap()])
                .env("POINTBC_LOG", "warn")
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        };
        for stage in ["demo-gen", "build-data", "train", "eval", "report"] {
            run(&[stage]);
        }
        let params = root.join("models/point.params");
        run(&["eval", "--params", params.to_str().unwrap(), "--protocol", proto.to_str().unwrap()]);
    }
    let (fa, fb) = (files(&roots[0]), files(&roots[1]));
    let same_listing = fa.len() == fb.len()
        && fa
            .iter()
            .zip(&fb)
            .all(|(x, y)| x.strip_prefix(&roots[0]).unwrap() == y.strip_prefix(&roots[1]).unwrap());
    let mut artifacts = 0;
    let mut mismatched = Vec::new();
    for (x, y) in fa.iter().zip(&fb) {
        let rel = x.strip_prefix(&roots[0]).unwrap().to_path_buf();
        if rel.starts_with("manifests") {
            // timestamps differ; recorded hashes must not
            let (ma, mb) = (RunManifest::load(x).unwrap(), RunManifest::load(y).unwrap());
            if ma.stage_hash != mb.stage_hash || ma.config_hash != mb.config_hash {
                mismatched.push(rel.display().to_string());
            }
            let outs = |m: &RunManifest| m.outputs.iter().map(|o| o.sha256.clone()).collect::<Vec<_>>();
            if outs(&ma) != outs(&mb) {
                mismatched.push(format!("{} outputs", rel.display()));
            }
            continue;
        }
        artifacts += 1;
        if file_hash(x).unwrap() != file_hash(y).unwrap() {
            mismatched.push(rel.display().to_string());
        }
    }
    c.check(
        "demo-gen, build-data, train, eval and report repeat hash-identically",
        same_listing && mismatched.is_empty() && artifacts > 0,
        format!("{artifacts} artifacts compared, mismatches {mismatched:?}"),
    );
    c.finish();
}
