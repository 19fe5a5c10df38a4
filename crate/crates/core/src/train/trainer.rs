//! Behavior cloning: chunked action targets, masked MSE and Adam.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::ProcessedDataset;
use crate::error::TrainError;
use crate::policy::obs::{Normalizer, ObsMode};
use crate::policy::{masked_mse, Policy, PolicyConfig, ACTION_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    pub lr_final_fraction: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub encoder_hidden: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub history: usize,
    pub chunk: usize,
    pub ensemble_decay: f64,
    /// Lower bound on observation standard deviations.
    pub obs_std_floor: f64,
    pub act_std_floor: f64,
    pub raster_normalization: RasterNormalization,
    /// Lower bound on raster standard deviations (pixel values in [0, 1]).
    pub raster_std_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterNormalization {
    PerPixel,
    PerChannel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            lr: 1e-3,
            lr_final_fraction: 0.05,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            encoder_hidden: 256,
            width: 128,
            layers: 2,
            heads: 4,
            history: 6,
            chunk: 10,
            ensemble_decay: 0.1,
            obs_std_floor: 1e-3,
            act_std_floor: 1e-3,
            raster_normalization: RasterNormalization::PerPixel,
            raster_std_floor: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.lr_final_fraction + (1.0 - self.lr_final_fraction) * cosine)
    }

    pub fn policy_config(&self, data: &ProcessedDataset) -> PolicyConfig {
        PolicyConfig {
            mode: data.mode,
            n_points: data.n_points,
            input_dim: data.input_dim,
            encoder_hidden: self.encoder_hidden,
            width: self.width,
            layers: self.layers,
            heads: self.heads,
            history: self.history,
            chunk: self.chunk,
            ensemble_decay: self.ensemble_decay,
        }
    }
}

/// Normalized inputs and chunk targets, one row per control step.
struct Prepared {
    obs: Vec<Array2<f32>>,
    target: Vec<Array2<f32>>,
    mask: Vec<Array2<f32>>,
    /// `(trajectory, last step of the window)`.
    windows: Vec<(usize, usize)>,
}

fn prepare(data: &ProcessedDataset, policy: &Policy<f32>) -> Prepared {
    let c = policy.config.chunk;
    let mut out = Prepared {
        obs: Vec::new(),
        target: Vec::new(),
        mask: Vec::new(),
        windows: Vec::new(),
    };
    for (ti, t) in data.trajectories.iter().enumerate() {
        let n = t.obs.len();
        let mut obs = Array2::<f32>::zeros((n, data.input_dim));
        for (i, o) in t.obs.iter().enumerate() {
            for (j, v) in policy.obs_norm.normalize(o).into_iter().enumerate() {
                obs[[i, j]] = v as f32;
            }
        }
        let mut target = Array2::<f32>::zeros((n, c * ACTION_DIM));
        let mut mask = Array2::<f32>::zeros((n, c * ACTION_DIM));
        for i in 0..n {
            for k in 0..c {
                let Some(a) = t.actions.get(i + k) else { break };
                for (d, v) in policy.act_norm.normalize(a).into_iter().enumerate() {
                    target[[i, k * ACTION_DIM + d]] = v as f32;
                    mask[[i, k * ACTION_DIM + d]] = 1.0;
                }
            }
        }
        out.obs.push(obs);
        out.target.push(target);
        out.mask.push(mask);
        out.windows.extend((0..n).map(|s| (ti, s)));
    }
    out
}

impl Prepared {
    /// Stacks windows into `(batch * history)` token rows. Steps before the
    /// episode start repeat the first observation, as the runner does.
    fn batch(&self, windows: &[(usize, usize)], history: usize) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        let f = self.obs[0].ncols();
        let o = self.target[0].ncols();
        let rows = windows.len() * history;
        let mut x = Array2::<f32>::zeros((rows, f));
        let mut y = Array2::<f32>::zeros((rows, o));
        let mut m = Array2::<f32>::zeros((rows, o));
        for (b, &(ti, s)) in windows.iter().enumerate() {
            for j in 0..history {
                let idx = (s + j + 1).saturating_sub(history);
                let r = b * history + j;
                x.row_mut(r).assign(&self.obs[ti].row(idx));
                y.row_mut(r).assign(&self.target[ti].row(idx));
                m.row_mut(r).assign(&self.mask[ti].row(idx));
            }
        }
        (x, y, m)
    }
}

/// Adam with bias correction.
pub struct Adam {
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(params: &[Array2<f32>], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
            beta1: beta1 as f32,
            beta2: beta2 as f32,
            eps: eps as f32,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f32>], grads: &[Array2<f32>], lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = lr as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: ObsMode,
    pub steps: usize,
    pub samples: usize,
    pub trajectories: usize,
    pub parameters: usize,
    pub config_hash: String,
    pub final_loss: f64,
    /// Masked MSE over every window of the dataset after training.
    pub final_dataset_mse: f64,
    /// Wall-clock time; not serialized.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy<f32>,
    /// Minibatch loss per optimizer step.
    pub loss_trace: Vec<f64>,
    pub summary: TrainSummary,
}

/// Means of consecutive blocks of `window` losses.
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    trace
        .chunks(window.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}

fn fit_normalizers(data: &ProcessedDataset, cfg: &TrainConfig) -> (Normalizer, Normalizer) {
    let rows = data.trajectories.iter().flat_map(|t| t.obs.iter().map(|o| o.as_slice()));
    let obs = match data.mode {
        ObsMode::Raster => match cfg.raster_normalization {
            RasterNormalization::PerPixel => Normalizer::fit(rows, data.input_dim, cfg.raster_std_floor),
            RasterNormalization::PerChannel => Normalizer::fit_channels(rows, data.input_dim, 3, cfg.raster_std_floor),
        },
        _ => {
            let mut n = Normalizer::fit(rows, data.input_dim, cfg.obs_std_floor);
            // validity flags stay 0/1 so an unseen occlusion cannot blow up the input
            for i in data.input_dim - data.n_points..data.input_dim {
                n.mean[i] = 0.0;
                n.std[i] = 1.0;
            }
            n
        }
    };
    let acts = data.trajectories.iter().flat_map(|t| t.actions.iter().map(|a| a.as_slice()));
    (obs, Normalizer::fit(acts, ACTION_DIM, cfg.act_std_floor))
}

/// Masked MSE over every window, in fixed order.
pub fn dataset_mse(policy: &Policy<f32>, data: &ProcessedDataset) -> Result<f64, TrainError> {
    let prep = prepare(data, policy);
    dataset_mse_prepared(policy, &prep)
}

fn dataset_mse_prepared(policy: &Policy<f32>, prep: &Prepared) -> Result<f64, TrainError> {
    let h = policy.config.history;
    let mut total = 0.0;
    let mut count = 0.0;
    for w in prep.windows.chunks(256) {
        let (x, y, m) = prep.batch(w, h);
        let (out, _) = policy.forward(&x, h)?;
        let n = m.sum() as f64;
        total += masked_mse(&out, &y, &m).0 as f64 * n;
        count += n;
    }
    Ok(total / count.max(1.0))
}

/// Trains a fresh policy. `on_step` sees the step index, the policy and the
/// loss trace so far after each optimizer update.
pub fn train_with(
    data: &ProcessedDataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &Policy<f32>, &[f64]),
) -> Result<TrainOutput, TrainError> {
    let start = Instant::now();
    if data.trajectories.iter().all(|t| t.obs.is_empty()) {
        return Err(TrainError::EmptyDataset);
    }
    let pc = cfg.policy_config(data);
    let mut policy = Policy::<f32>::new(pc, cfg.seed)?;
    (policy.obs_norm, policy.act_norm) = fit_normalizers(data, cfg);
    let prep = prepare(data, &policy);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C);
    let mut adam = Adam::new(&policy.params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut grads = policy.zeros_like();
    let mut trace = Vec::with_capacity(cfg.steps);
    let h = cfg.history;
    let mut picks = vec![(0, 0); cfg.batch_size];
    for step in 0..cfg.steps {
        for p in picks.iter_mut() {
            *p = prep.windows[rng.random_range(0..prep.windows.len())];
        }
        let (x, y, m) = prep.batch(&picks, h);
        let (out, cache) = policy.forward(&x, h)?;
        let (loss, dout) = masked_mse(&out, &y, &m);
        let lr = cfg.lr_at(step);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step,
                lr,
                batch: cfg.batch_size,
                last_loss: trace.last().copied().unwrap_or(f64::NAN),
            });
        }
        trace.push(loss as f64);
        grads.iter_mut().for_each(|g| g.fill(0.0));
        policy.backward(&cache, &dout, &mut grads);
        if cfg.grad_clip > 0.0 {
            let norm = crate::policy::model::sum_squares(&grads).sqrt() as f64;
            if norm > cfg.grad_clip {
                let s = (cfg.grad_clip / norm) as f32;
                grads.iter_mut().for_each(|g| g.mapv_inplace(|v| v * s));
            }
        }
        adam.step(&mut policy.params, &grads, lr);
        on_step(step, &policy, &trace);
    }
    let final_dataset_mse = dataset_mse_prepared(&policy, &prep)?;
    let summary = TrainSummary {
        mode: data.mode,
        steps: cfg.steps,
        samples: prep.windows.len(),
        trajectories: data.trajectories.len(),
        parameters: policy.parameter_count(),
        config_hash: policy.config.hash(),
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        final_dataset_mse,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "trained {} policy: {} steps, final loss {:.3e}, dataset mse {:.3e}, {:.1}s",
        data.mode.as_str(),
        cfg.steps,
        summary.final_loss,
        final_dataset_mse,
        summary.seconds
    );
    Ok(TrainOutput {
        policy,
        loss_trace: trace,
        summary,
    })
}

pub fn train(data: &ProcessedDataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    train_with(data, cfg, |_, _, _| {})
}

/// Image baseline: same trunk, loss and settings on raw rasters.
pub fn train_baseline(demos: &crate::sim::DemoDataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    let data = super::dataset::build_raster_dataset(demos);
    train(&data, cfg)
}
