//! Closed-loop execution: rolling observation history, chunk prediction,
//! and temporal ensembling into one action per control step.

use std::collections::VecDeque;

use super::ensemble::temporal_ensemble;
use super::model::{Policy, ACTION_DIM};
use super::scalar::Scalar;
use crate::error::PolicyError;
use crate::sim::Action;

#[derive(Debug, Clone)]
pub struct PolicyRunner<'a, T: Scalar> {
    policy: &'a Policy<T>,
    history: VecDeque<Vec<f64>>,
    /// `(origin step, chunk)` for chunks that still cover a future step.
    chunks: VecDeque<(usize, Vec<[f64; ACTION_DIM]>)>,
    step: usize,
    last_action: Option<Action>,
    /// Steps at which every tracked point was invalid.
    pub blind_steps: Vec<usize>,
}

impl<'a, T: Scalar> PolicyRunner<'a, T> {
    pub fn new(policy: &'a Policy<T>) -> Self {
        Self {
            policy,
            history: VecDeque::new(),
            chunks: VecDeque::new(),
            step: 0,
            last_action: None,
            blind_steps: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.chunks.clear();
        self.step = 0;
        self.last_action = None;
        self.blind_steps.clear();
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// One control step. `blind` marks an observation in which no point was
    /// valid; the runner then repeats its last action without consulting
    /// the network.
    pub fn act(&mut self, features: &[f64], blind: bool) -> Result<Action, PolicyError> {
        let t = self.step;
        self.step += 1;
        if blind {
            self.blind_steps.push(t);
            log::warn!("all tracked points invalid at step {t}; holding last action");
            return Ok(self.last_action.unwrap_or(Action::hold(1.0)));
        }
        let h = self.policy.config.history;
        if self.history.is_empty() {
            self.history.extend(std::iter::repeat_n(features.to_vec(), h));
        } else {
            self.history.push_back(features.to_vec());
            while self.history.len() > h {
                self.history.pop_front();
            }
        }
        let rows: Vec<&[f64]> = self.history.iter().map(|v| v.as_slice()).collect();
        let chunk = self.policy.predict(&rows)?.pop().expect("one chunk per token");
        self.chunks.push_back((t, chunk));
        let c = self.policy.config.chunk;
        while self.chunks.front().is_some_and(|(o, _)| t - o >= c) {
            self.chunks.pop_front();
        }
        let predictions: Vec<(usize, [f64; ACTION_DIM])> =
            self.chunks.iter().rev().map(|(o, ch)| (t - o, ch[t - o])).collect();
        let a = temporal_ensemble(&predictions, self.policy.config.ensemble_decay);
        let action = Action::from_slice(&a);
        self.last_action = Some(action);
        Ok(action)
    }
}
