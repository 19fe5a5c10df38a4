use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown task id `{0}`")]
    UnknownTask(String),
    #[error("position ({x:.3}, {y:.3}) outside workspace x in [{x_min}, {x_max}], y in [{y_min}, {y_max}]")]
    OutsideWorkspace {
        x: f64,
        y: f64,
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
    },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("task `{task}` expects {expected} explicit positions, got {got}")]
    PositionCount {
        task: String,
        expected: usize,
        got: usize,
    },
    #[error("no {set} instance #{index} for class `{class}`")]
    MissingInstance {
        class: String,
        set: &'static str,
        index: usize,
    },
    #[error("expert failed on task `{task}` (seed {seed}): {reason}")]
    ExpertFailure {
        task: String,
        seed: u64,
        reason: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("no candidate of class `{class}` found in target frame")]
    ClassMissing { class: String },
    #[error("best match for `{label}` at distance {distance:.4} exceeds reject threshold {threshold:.4}")]
    MatchFailure {
        label: String,
        distance: f64,
        threshold: f64,
    },
    #[error("annotation invalid: {0}")]
    InvalidAnnotation(String),
    #[error("no visible keypoint within {radius} px of annotated point `{label}` at ({u:.1}, {v:.1})")]
    NothingUnderClick {
        label: String,
        u: f64,
        v: f64,
        radius: f64,
    },
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input length {got} does not match expected {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("history must hold between 1 and {max} tokens, got {got}")]
    HistoryLength { max: usize, got: usize },
    #[error("parameter file config hash {found} does not match expected {expected}")]
    HashMismatch { expected: String, found: String },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("loss became non-finite at step {step} (lr {lr:e}, batch {batch}, last finite loss {last_loss:e})")]
    NonFiniteLoss {
        step: usize,
        lr: f64,
        batch: usize,
        last_loss: f64,
    },
    #[error("dataset mode {found} incompatible with requested {expected}")]
    ModeMismatch { expected: String, found: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Vision(#[from] VisionError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("policy mode {mode} cannot run condition {condition}")]
    ModeMismatch { mode: String, condition: String },
    #[error("point-mode evaluation needs the reference points resolved at dataset build time")]
    MissingReference,
    #[error("{count} evaluation (instance, position) pairs also appear in the training demos, e.g. {example}")]
    SplitLeak { count: usize, example: String },
    #[error("protocol task {found} does not match the reference task {expected}")]
    TaskMismatch { expected: String, found: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}
