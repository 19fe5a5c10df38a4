//! Evaluation conditions and per-trial scene sampling.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sim::{ObjectSet, Split, TaskId, Variation};
use crate::vision::DepthProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    InDomain,
    NovelInstance,
    Distractor,
    DepthPredicted,
    GraphPrior,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::InDomain,
        Condition::NovelInstance,
        Condition::Distractor,
        Condition::DepthPredicted,
        Condition::GraphPrior,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::InDomain => "in_domain",
            Condition::NovelInstance => "novel_instance",
            Condition::Distractor => "distractor",
            Condition::DepthPredicted => "depth_predicted",
            Condition::GraphPrior => "graph_prior",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub task_id: TaskId,
    pub condition: Condition,
    pub n_trials: usize,
    /// Trial `i` resets with seed `seed + i`.
    pub seed: u64,
    /// Distractor count for the distractor condition.
    pub distractors: usize,
    /// Depth source for the depth_predicted condition.
    pub predicted_depth: DepthProvider,
    /// Identifies the geometric success predicates in use.
    pub success_predicate: String,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            task_id: TaskId::PickObject,
            condition: Condition::InDomain,
            n_trials: 50,
            seed: 10_000,
            distractors: 3,
            predicted_depth: DepthProvider::predicted(1.02, 0.005, 0),
            success_predicate: crate::sim::tasks::PREDICATE_VERSION.to_string(),
        }
    }
}

impl EvalProtocol {
    pub fn new(task_id: TaskId, condition: Condition, n_trials: usize, seed: u64) -> Self {
        Self {
            task_id,
            condition,
            n_trials,
            seed,
            ..Self::default()
        }
    }

    pub fn trial_seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.n_trials as u64).map(move |i| self.seed.wrapping_add(i))
    }

    /// Scene variation: held-out positions always; novel instances and
    /// distractors per condition.
    pub fn variation(&self) -> Variation {
        let set = match self.condition {
            Condition::NovelInstance => ObjectSet::Novel,
            _ => ObjectSet::InDomain,
        };
        let distractors = match self.condition {
            Condition::Distractor => self.distractors,
            _ => 0,
        };
        Variation::sampled(set, Split::Eval, distractors)
    }

    pub fn depth(&self) -> DepthProvider {
        match self.condition {
            Condition::DepthPredicted => self.predicted_depth,
            _ => DepthProvider::camera(),
        }
    }
}
