//! Closed-loop evaluation across in-domain, novel-instance, distractor,
//! predicted-depth and graph-prior conditions.

pub mod controller;
pub mod protocol;
pub mod report;
pub mod run;

pub use controller::{Controller, ExpertController, LearnedController, RandomController};
pub use protocol::{Condition, EvalProtocol};
pub use report::{ResultRow, ResultTable};
pub use run::{run_episode, run_eval, Bench, EpisodeRecord, EvalOutcome, Footprint};
