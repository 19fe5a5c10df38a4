//! `pointbc`: demo generation, dataset building, training, evaluation,
//! reporting and the annotation service.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pointbc::app::manifest::RunManifest;
use pointbc::app::pipeline::{evaluate, load_table, save_outcomes, write_report};
use pointbc::app::serve::{serve, ServeState};
use pointbc::app::{ConfigError, Pipeline, RunConfig, Stage, StageFailure};
use pointbc::eval::{Bench, Condition, EvalProtocol, Footprint, ResultTable};
use pointbc::policy::{io as policy_io, ObsMode, Policy};
use pointbc::sim::{container, TaskId};
use pointbc::train::ProcessedDataset;
use pointbc::vision::DepthProvider;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "pointbc", version, about = "Point-prescribed behavior cloning on a simulated tabletop")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info", env = "POINTBC_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run (demo, data, training or evaluation seed; training seed for `pipeline`).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output root holding every artifact and manifest.
    #[arg(long, value_name = "DIR", env = "POINTBC_OUT", default_value = "runs/default")]
    out: PathBuf,
    /// Print the planned stages and exit without touching anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Record scripted-expert demonstrations on the training split.
    DemoGen {
        #[command(flatten)]
        run: RunArgs,
        /// Task to record (overrides the config).
        #[arg(long)]
        task: Option<TaskId>,
        /// Number of successful demonstrations (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Correspond, track and back-project every demo from one annotation.
    BuildData {
        #[command(flatten)]
        run: RunArgs,
        /// Annotation JSON file (overrides the config).
        #[arg(long, value_name = "PATH")]
        annotation: Option<PathBuf>,
    },
    /// Train the point (or graph) policies.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the raw-raster baseline with the same trunk and settings.
    TrainBaseline {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Closed-loop evaluation. Without --params, evaluates every trained policy on the configured conditions.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter file of a single policy to evaluate.
        #[arg(long, value_name = "PATH", requires = "protocol")]
        params: Option<PathBuf>,
        /// Evaluation protocol (TOML or JSON) for --params.
        #[arg(long, value_name = "PATH", requires = "params")]
        protocol: Option<PathBuf>,
        /// Processed dataset holding the reference points for --params (point and graph modes).
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
    },
    /// Markdown, CSV and SVG report from evaluation results.
    Report {
        #[command(flatten)]
        run: RunArgs,
        /// Result files (evaluation JSON or wide CSV). Defaults to the run's evaluation results.
        inputs: Vec<PathBuf>,
    },
    /// Serve first frames and accept annotations over HTTP.
    Serve {
        #[command(flatten)]
        run: RunArgs,
        /// Demo container to serve (defaults to the run's demos).
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Listen port.
        #[arg(long, default_value_t = 8787)]
        port: u16,
    },
    /// demo-gen, build-data, train, train-baseline, eval and report, skipping up-to-date stages.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Run only this stage.
        #[arg(long, value_name = "NAME")]
        stage: Option<Stage>,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<StageFailure> for Failure {
    fn from(e: StageFailure) -> Self {
        Failure::Stage(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(format!("{e:#}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_secs().init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn load_config(run: &RunArgs) -> Result<RunConfig, ConfigError> {
    match &run.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn pipeline(run: &RunArgs, mut cfg: RunConfig, stage: Option<Stage>) -> Result<Pipeline, ConfigError> {
    if let Some(seed) = run.seed {
        match stage {
            Some(Stage::DemoGen) => cfg.demos.seed = seed,
            Some(Stage::BuildData) => cfg.data.depth_seed = seed,
            Some(Stage::Eval) => cfg.eval.seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    cfg.validate()?;
    Ok(Pipeline::new(cfg, &run.out, command_line()))
}

fn run_stages(p: &Pipeline, run: &RunArgs, only: Option<Stage>) -> Result<(), Failure> {
    if run.dry_run {
        print!("{}", p.describe(only));
        return Ok(());
    }
    for r in p.run(only)? {
        println!(
            "{}: {} ({})",
            r.stage,
            if r.skipped { "up to date" } else { "done" },
            r.manifest.display()
        );
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::DemoGen { run, task, n } => {
            let mut cfg = load_config(&run)?;
            cfg.task = task.unwrap_or(cfg.task);
            cfg.demos.n_demos = n.unwrap_or(cfg.demos.n_demos);
            run_stages(&pipeline(&run, cfg, Some(Stage::DemoGen))?, &run, Some(Stage::DemoGen))
        }
        Command::BuildData { run, annotation } => {
            let mut cfg = load_config(&run)?;
            cfg.data.annotation = annotation.or(cfg.data.annotation);
            run_stages(&pipeline(&run, cfg, Some(Stage::BuildData))?, &run, Some(Stage::BuildData))
        }
        Command::Train { run } => run_stages(&pipeline(&run, load_config(&run)?, Some(Stage::Train))?, &run, Some(Stage::Train)),
        Command::TrainBaseline { run } => {
            let mut cfg = load_config(&run)?;
            cfg.eval.baseline = true;
            run_stages(&pipeline(&run, cfg, Some(Stage::TrainBaseline))?, &run, Some(Stage::TrainBaseline))
        }
        Command::Eval {
            run,
            params: Some(params),
            protocol: Some(protocol),
            data,
        } => eval_single(&run, &params, &protocol, data.as_deref()),
        Command::Eval { run, .. } => run_stages(&pipeline(&run, load_config(&run)?, Some(Stage::Eval))?, &run, Some(Stage::Eval)),
        Command::Report { run, inputs } => report(&run, &inputs),
        Command::Serve { run, data, host, port } => {
            let path = data.unwrap_or_else(|| pointbc::app::Layout::new(&run.out).demos());
            if run.dry_run {
                println!("would serve {} on {host}:{port}", path.display());
                return Ok(());
            }
            let demos = container::read_file(&path)
                .map_err(|e| Failure::Config(format!("cannot read demos {}: {e}", path.display())))?;
            let state = Arc::new(ServeState::new(demos, run.out.join("annotations")));
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .context("starting async runtime")?;
            rt.block_on(serve(state, (host, port).into()))
                .with_context(|| format!("serving on {host}:{port}"))?;
            Ok(())
        }
        Command::Pipeline { run, stage } => run_stages(&pipeline(&run, load_config(&run)?, None)?, &run, stage),
    }
}

fn read_protocol(path: &Path) -> Result<EvalProtocol, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read protocol {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Config(format!("invalid protocol {}: {e}", path.display())))
}

fn eval_single(run: &RunArgs, params: &Path, protocol_path: &Path, data: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(run)?;
    let mut protocol = read_protocol(protocol_path)?;
    if let Some(seed) = run.seed {
        protocol.seed = seed;
    }
    let p = Pipeline::new(cfg, &run.out, command_line());
    let stem = params.file_stem().and_then(|s| s.to_str()).unwrap_or("policy").to_string();
    let name = format!("{stem}-{}", protocol.condition);
    let results = p.layout.root.join("eval").join(format!("{name}.json"));
    if run.dry_run {
        println!("would evaluate {} under {} into {}", params.display(), protocol.condition, results.display());
        return Ok(());
    }
    let manifest_path = p.layout.root.join("manifests").join(format!("eval-{name}.json"));
    let stage_hash = pointbc::app::config::hash_json(&(&protocol, pointbc::app::manifest::file_hash(params).context("reading params")?));
    let mut manifest = RunManifest::start(&p.command, "eval", p.cfg.hash(), stage_hash, vec![protocol.seed]);
    manifest.write(&manifest_path).context("writing manifest")?;
    let outcome = (|| -> Result<Vec<PathBuf>> {
        let demos = container::read_file(&p.layout.demos()).context("reading demos")?;
        let policy: Policy<f32> = policy_io::load(params, None)?;
        let processed = match policy.config.mode {
            ObsMode::Raster => None,
            mode => {
                let path = data.map(Path::to_path_buf).unwrap_or_else(|| p.layout.data(mode.as_str()));
                Some(ProcessedDataset::load(&path).with_context(|| format!("reading {}", path.display()))?)
            }
        };
        let trained_depth = processed
            .as_ref()
            .and_then(|d| d.provenance.depth)
            .unwrap_or_else(DepthProvider::camera);
        let depth = if protocol.condition == Condition::DepthPredicted { protocol.depth() } else { trained_depth };
        let reference = processed.as_ref().and_then(|d| d.reference.as_ref());
        let out = evaluate(&Bench::from_demos(&demos), &demos, &policy, reference, depth, &protocol, &Footprint::of_demos(&demos))?;
        println!("{} {} {}: {}", out.row.method, out.row.task, out.row.condition, out.row.cell());
        save_outcomes(&results, &[out])
    })();
    match outcome {
        Ok(outputs) => {
            manifest.complete(&outputs).and_then(|_| manifest.write(&manifest_path)).context("finalizing manifest")?;
            Ok(())
        }
        Err(e) => {
            manifest.fail(&format!("{e:#}"));
            let _ = manifest.write(&manifest_path);
            Err(Failure::Stage(format!("stage eval failed (manifest {}): {e:#}", manifest_path.display())))
        }
    }
}

fn report(run: &RunArgs, inputs: &[PathBuf]) -> Result<(), Failure> {
    let p = pipeline(run, load_config(run)?, Some(Stage::Report))?;
    if inputs.is_empty() && p.layout.results().exists() {
        return run_stages(&p, run, Some(Stage::Report));
    }
    let dir = p.layout.report_dir();
    if run.dry_run {
        println!("would write a report of {} input(s) into {}", inputs.len(), dir.display());
        return Ok(());
    }
    let mut table = ResultTable::default();
    for path in inputs {
        table.extend(load_table(path).map_err(|e| Failure::Config(format!("{}: {e:#}", path.display())))?);
    }
    for path in write_report(&table, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
