//! Stage orchestration over a fixed output layout. Every stage writes a
//! manifest before it starts and is skipped when its manifest is fresh.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{hash_json, RunConfig};
use super::manifest::{file_hash, RunManifest};
use crate::eval::{Bench, Condition, EvalOutcome, EvalProtocol, Footprint, LearnedController, ResultTable};
use crate::policy::{io as policy_io, ObsMode, Policy};
use crate::sim::{container, record_demos, CameraIntrinsics, Catalog, DemoDataset, SimConfig};
use crate::train::{build_dataset, scripted_reference, train, train_baseline, BuildOptions, ProcessedDataset, TrainOutput};
use crate::vision::{Annotation, DepthMode, DepthProvider, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    DemoGen,
    BuildData,
    Train,
    TrainBaseline,
    Eval,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::DemoGen,
        Stage::BuildData,
        Stage::Train,
        Stage::TrainBaseline,
        Stage::Eval,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DemoGen => "demo-gen",
            Stage::BuildData => "build-data",
            Stage::Train => "train",
            Stage::TrainBaseline => "train-baseline",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected one of demo-gen, build-data, train, train-baseline, eval, report)"))
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed (manifest {}): {message}", manifest.display())]
pub struct StageFailure {
    pub stage: Stage,
    pub manifest: PathBuf,
    pub message: String,
}

/// Artifact paths under one output root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn demos(&self) -> PathBuf {
        self.root.join("demos.pbc")
    }
    pub fn annotation(&self) -> PathBuf {
        self.root.join("annotation.json")
    }
    pub fn data(&self, variant: &str) -> PathBuf {
        self.root.join("data").join(format!("{variant}.pbp"))
    }
    pub fn params(&self, variant: &str) -> PathBuf {
        self.root.join("models").join(format!("{variant}.params"))
    }
    pub fn loss(&self, variant: &str) -> PathBuf {
        self.root.join("models").join(format!("{variant}.loss.csv"))
    }
    pub fn train_summary(&self, variant: &str) -> PathBuf {
        self.root.join("models").join(format!("{variant}.summary.json"))
    }
    pub fn results(&self) -> PathBuf {
        self.root.join("eval").join("results.json")
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }
}

/// One trained policy and the conditions it is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub name: String,
    pub mode: ObsMode,
    pub depth: DepthProvider,
    pub conditions: Vec<Condition>,
}

pub const BASELINE: &str = "raster_baseline";

impl RunConfig {
    pub fn predicted_depth(&self) -> DepthProvider {
        DepthProvider::predicted(self.data.predicted_bias, self.data.predicted_sigma, self.data.depth_seed)
    }

    pub fn training_depth(&self) -> DepthProvider {
        match self.data.depth {
            DepthMode::Camera => DepthProvider::camera(),
            DepthMode::Predicted => self.predicted_depth(),
        }
    }

    fn scene_conditions(&self) -> Vec<Condition> {
        self.eval
            .conditions
            .iter()
            .copied()
            .filter(|c| matches!(c, Condition::InDomain | Condition::NovelInstance | Condition::Distractor))
            .collect()
    }

    /// Point-feature policies to build and train. The predicted-depth
    /// condition gets its own policy trained on predicted depth, and the
    /// graph-prior condition its own graph-mode policy.
    pub fn variants(&self) -> Vec<Variant> {
        let mut main = Variant {
            name: self.mode.as_str().to_string(),
            mode: self.mode,
            depth: self.training_depth(),
            conditions: self.scene_conditions(),
        };
        let mut out = Vec::new();
        if self.eval.conditions.contains(&Condition::DepthPredicted) {
            if self.data.depth == DepthMode::Predicted {
                main.conditions.push(Condition::DepthPredicted);
            } else {
                out.push(Variant {
                    name: format!("{}_predicted_depth", self.mode.as_str()),
                    mode: self.mode,
                    depth: self.predicted_depth(),
                    conditions: vec![Condition::DepthPredicted],
                });
            }
        }
        if self.eval.conditions.contains(&Condition::GraphPrior) {
            out.push(Variant {
                name: ObsMode::Graph.as_str().to_string(),
                mode: ObsMode::Graph,
                depth: self.training_depth(),
                conditions: vec![Condition::GraphPrior],
            });
        }
        out.insert(0, main);
        out
    }

    pub fn baseline_variant(&self) -> Option<Variant> {
        self.eval.baseline.then(|| Variant {
            name: BASELINE.to_string(),
            mode: ObsMode::Raster,
            depth: DepthProvider::camera(),
            conditions: self.scene_conditions(),
        })
    }

    pub fn protocol(&self, condition: Condition) -> EvalProtocol {
        EvalProtocol {
            distractors: self.eval.distractors,
            predicted_depth: self.predicted_depth(),
            ..EvalProtocol::new(self.task, condition, self.eval.n_trials, self.eval.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage: Stage,
    pub skipped: bool,
    pub manifest: PathBuf,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
    /// Command line recorded in manifests.
    pub command: String,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>, command: impl Into<String>) -> Self {
        Self {
            cfg,
            layout: Layout::new(root),
            command: command.into(),
        }
    }

    /// Stages in execution order; `only` restricts to a single stage.
    pub fn plan(&self, only: Option<Stage>) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|&s| s != Stage::TrainBaseline || self.cfg.eval.baseline)
            .filter(|&s| only.is_none_or(|o| o == s))
            .collect()
    }

    /// Human-readable plan for `--dry-run`.
    pub fn describe(&self, only: Option<Stage>) -> String {
        let mut out = format!("output root: {}\n", self.layout.root.display());
        for stage in self.plan(only) {
            let state = match self.stage_hash(stage) {
                Ok(h) if RunManifest::load(&self.layout.manifest(stage)).is_some_and(|m| m.is_fresh(&h)) => "up to date",
                Ok(_) => "will run",
                Err(_) => "will run (inputs not yet produced)",
            };
            out.push_str(&format!("  {stage}: {state}\n"));
        }
        out
    }

    pub fn run(&self, only: Option<Stage>) -> Result<Vec<StageReport>, StageFailure> {
        self.plan(only).into_iter().map(|s| self.run_stage(s)).collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageReport, StageFailure> {
        let manifest_path = self.layout.manifest(stage);
        let failure = |message: String| StageFailure {
            stage,
            manifest: manifest_path.clone(),
            message,
        };
        let stage_hash = self.stage_hash(stage).map_err(|e| failure(format!("{e:#}")))?;
        if RunManifest::load(&manifest_path).is_some_and(|m| m.is_fresh(&stage_hash)) {
            log::info!("{stage}: up to date, skipped");
            return Ok(StageReport {
                stage,
                skipped: true,
                manifest: manifest_path,
            });
        }
        let mut manifest = RunManifest::start(&self.command, stage.as_str(), self.cfg.hash(), stage_hash, self.seeds(stage));
        manifest
            .write(&manifest_path)
            .map_err(|e| failure(format!("cannot write manifest: {e}")))?;
        log::info!("{stage}: running");
        let outputs = match self.execute(stage) {
            Ok(outputs) => outputs,
            Err(e) => {
                let message = format!("{e:#}");
                manifest.fail(&message);
                let _ = manifest.write(&manifest_path);
                return Err(failure(message));
            }
        };
        manifest
            .complete(&outputs)
            .and_then(|_| manifest.write(&manifest_path))
            .map_err(|e| failure(format!("cannot finalize manifest: {e}")))?;
        Ok(StageReport {
            stage,
            skipped: false,
            manifest: manifest_path,
        })
    }

    fn seeds(&self, stage: Stage) -> Vec<u64> {
        let c = &self.cfg;
        match stage {
            Stage::DemoGen => vec![c.demos.seed],
            Stage::BuildData => vec![c.data.depth_seed],
            Stage::Train | Stage::TrainBaseline => vec![c.train.seed],
            Stage::Eval => vec![c.eval.seed, c.data.depth_seed],
            Stage::Report => Vec::new(),
        }
    }

    fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<String>> {
        paths
            .iter()
            .map(|p| file_hash(p).with_context(|| format!("missing input {}", p.display())))
            .collect()
    }

    fn point_variants(&self) -> Vec<Variant> {
        self.cfg.variants()
    }

    fn all_variants(&self) -> Vec<Variant> {
        let mut v = self.point_variants();
        v.extend(self.cfg.baseline_variant());
        v
    }

    /// Hash over the configuration slice and input artifacts of a stage.
    pub fn stage_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.cfg;
        let l = &self.layout;
        let version = env!("CARGO_PKG_VERSION");
        let value = match stage {
            Stage::DemoGen => serde_json::json!([version, stage, c.task, c.demos]),
            Stage::BuildData => {
                let mut inputs = vec![l.demos()];
                inputs.extend(c.data.annotation.clone());
                serde_json::json!([version, stage, c.task, c.data, self.point_variants(), Self::hash_inputs(&inputs)?])
            }
            Stage::Train => {
                let inputs: Vec<PathBuf> = self.point_variants().iter().map(|v| l.data(&v.name)).collect();
                serde_json::json!([version, stage, c.train, Self::hash_inputs(&inputs)?])
            }
            Stage::TrainBaseline => serde_json::json!([version, stage, c.train, Self::hash_inputs(&[l.demos()])?]),
            Stage::Eval => {
                let mut inputs = vec![l.demos()];
                for v in self.all_variants() {
                    inputs.push(l.params(&v.name));
                    if v.mode != ObsMode::Raster {
                        inputs.push(l.data(&v.name));
                    }
                }
                serde_json::json!([version, stage, c.eval, c.data, self.all_variants(), Self::hash_inputs(&inputs)?])
            }
            Stage::Report => serde_json::json!([version, stage, Self::hash_inputs(&[l.results()])?]),
        };
        Ok(hash_json(&value))
    }

    fn execute(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        match stage {
            Stage::DemoGen => self.demo_gen(),
            Stage::BuildData => self.build_data(),
            Stage::Train => self.train(),
            Stage::TrainBaseline => self.train_baseline(),
            Stage::Eval => self.eval(),
            Stage::Report => {
                let outcomes = load_outcomes(&self.layout.results())?;
                write_report(&table_of(&outcomes), &self.layout.report_dir())
            }
        }
    }

    fn demo_gen(&self) -> Result<Vec<PathBuf>> {
        let c = &self.cfg;
        let demos = record_demos(
            &Catalog::standard(),
            &CameraIntrinsics::tabletop(),
            &SimConfig::default(),
            c.task,
            c.demos.n_demos,
            c.demos.seed,
        )?;
        let path = self.layout.demos();
        create_parent(&path)?;
        container::write_file(&path, &demos)?;
        Ok(vec![path])
    }

    fn load_demos(&self) -> Result<DemoDataset> {
        let path = self.layout.demos();
        container::read_file(&path).with_context(|| format!("cannot read demos {}", path.display()))
    }

    /// The configured annotation file, or a scripted click on the reference
    /// demo's first frame.
    pub fn annotation(&self, demos: &DemoDataset) -> Result<Annotation> {
        let mut annotation = match &self.cfg.data.annotation {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("cannot read annotation {}", path.display()))?;
                Annotation::from_json(&text)?
            }
            None => scripted_reference(demos, self.cfg.data.reference_demo)?,
        };
        if annotation.task_id != demos.header.task_id {
            bail!("annotation is for task {}, demos are {}", annotation.task_id, demos.header.task_id);
        }
        if let Some(k) = self.cfg.data.n_points {
            if k > annotation.points.len() {
                bail!("data.n_points = {k} but the annotation has {} points", annotation.points.len());
            }
            annotation.points.truncate(k);
        }
        Ok(annotation)
    }

    fn build_data(&self) -> Result<Vec<PathBuf>> {
        let demos = self.load_demos()?;
        let annotation = self.annotation(&demos)?;
        let mut outputs = vec![self.layout.annotation()];
        create_parent(&outputs[0])?;
        std::fs::write(&outputs[0], annotation.to_json())?;
        for v in self.point_variants() {
            let data = build_dataset(&demos, &annotation, BuildOptions::new(v.mode, v.depth, &demos.header.catalog))?;
            for d in &data.provenance.dropped {
                log::warn!("{}: demo {} dropped: {}", v.name, d.demo_index, d.reason);
            }
            let path = self.layout.data(&v.name);
            create_parent(&path)?;
            data.save(&path)?;
            outputs.push(path);
        }
        Ok(outputs)
    }

    fn save_trained(&self, name: &str, out: &TrainOutput) -> Result<Vec<PathBuf>> {
        let l = &self.layout;
        let (params, loss, summary) = (l.params(name), l.loss(name), l.train_summary(name));
        create_parent(&params)?;
        policy_io::save(&out.policy, &params)?;
        let mut w = csv::Writer::from_path(&loss)?;
        w.write_record(["step", "loss"])?;
        for (i, v) in out.loss_trace.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:e}")])?;
        }
        w.flush()?;
        let doc = serde_json::json!({ "summary": out.summary, "train": self.cfg.train });
        std::fs::write(&summary, serde_json::to_string_pretty(&doc)?)?;
        Ok(vec![params, loss, summary])
    }

    fn train(&self) -> Result<Vec<PathBuf>> {
        let mut outputs = Vec::new();
        for v in self.point_variants() {
            let data = ProcessedDataset::load(&self.layout.data(&v.name))?;
            let out = train(&data, &self.cfg.train).with_context(|| format!("training {}", v.name))?;
            outputs.extend(self.save_trained(&v.name, &out)?);
        }
        Ok(outputs)
    }

    fn train_baseline(&self) -> Result<Vec<PathBuf>> {
        let demos = self.load_demos()?;
        let out = train_baseline(&demos, &self.cfg.train).context("training raster baseline")?;
        self.save_trained(BASELINE, &out)
    }

    fn eval(&self) -> Result<Vec<PathBuf>> {
        let demos = self.load_demos()?;
        let bench = Bench::from_demos(&demos);
        let footprint = Footprint::of_demos(&demos);
        let mut outcomes = Vec::new();
        for v in self.all_variants() {
            let policy: Policy<f32> = policy_io::load(&self.layout.params(&v.name), None)?;
            let data = match v.mode {
                ObsMode::Raster => None,
                _ => Some(ProcessedDataset::load(&self.layout.data(&v.name))?),
            };
            let reference = data.as_ref().and_then(|d| d.reference.as_ref());
            for &condition in &v.conditions {
                let protocol = self.cfg.protocol(condition);
                let depth = if condition == Condition::DepthPredicted { protocol.depth() } else { v.depth };
                outcomes.push(evaluate(&bench, &demos, &policy, reference, depth, &protocol, &footprint)?);
            }
        }
        save_outcomes(&self.layout.results(), &outcomes)
    }
}

/// Closed-loop evaluation of one policy under one protocol.
pub fn evaluate(
    bench: &Bench,
    demos: &DemoDataset,
    policy: &Policy<f32>,
    reference: Option<&crate::vision::Reference>,
    depth: DepthProvider,
    protocol: &EvalProtocol,
    footprint: &Footprint,
) -> Result<EvalOutcome> {
    if protocol.task_id != demos.header.task_id {
        bail!("protocol task {} does not match demos task {}", protocol.task_id, demos.header.task_id);
    }
    let mode_ok = match protocol.condition {
        Condition::GraphPrior => policy.config.mode == ObsMode::Graph,
        Condition::DepthPredicted => policy.config.mode != ObsMode::Raster,
        _ => true,
    };
    if !mode_ok {
        return Err(crate::error::EvalError::ModeMismatch {
            mode: policy.config.mode.as_str().to_string(),
            condition: protocol.condition.to_string(),
        }
        .into());
    }
    if policy.config.mode != ObsMode::Raster && reference.is_none() {
        return Err(crate::error::EvalError::MissingReference.into());
    }
    let tracker = TrackerConfig::new(demos.header.catalog.reject_threshold());
    let mut controller = LearnedController::new(policy, reference, demos.header.camera.clone(), tracker, depth);
    Ok(crate::eval::run_eval(bench, &mut controller, protocol, Some(footprint))?)
}

pub fn save_outcomes(path: &Path, outcomes: &[EvalOutcome]) -> Result<Vec<PathBuf>> {
    create_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(outcomes)?)?;
    let csv = path.with_extension("csv");
    std::fs::write(&csv, table_of(outcomes).to_csv()?)?;
    Ok(vec![path.to_path_buf(), csv])
}

pub fn load_outcomes(path: &Path) -> Result<Vec<EvalOutcome>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read results {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn table_of(outcomes: &[EvalOutcome]) -> ResultTable {
    ResultTable::new(outcomes.iter().map(|o| o.row.clone()).collect())
}

/// Loads a results file: evaluation JSON or a wide CSV table.
pub fn load_table(path: &Path) -> Result<ResultTable> {
    if path.extension().is_some_and(|e| e == "csv") {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        ResultTable::from_csv(&text)
    } else {
        Ok(table_of(&load_outcomes(path)?))
    }
}

/// Writes `report.md`, `results.csv` and `success.svg` into `dir`.
pub fn write_report(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let md = dir.join("report.md");
    let csv = dir.join("results.csv");
    let svg = dir.join("success.svg");
    std::fs::write(&md, table.to_markdown())?;
    std::fs::write(&csv, table.to_csv()?)?;
    table.plot_svg(&svg)?;
    Ok(vec![md, csv, svg])
}

fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir),
        _ => Ok(()),
    }
}
