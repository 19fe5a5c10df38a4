//! Observation encoder + causal transformer + linear chunk head.
//!
//! Tokens are processed as a 2-D array with one row per token; rows are
//! grouped into sequences of `seq` consecutive tokens.

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::nn::{
    causal_attention, causal_attention_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, linear,
    linear_backward, LnCache,
};
use super::obs::{Normalizer, ObsMode};
use super::scalar::{cast, Scalar};
use crate::error::PolicyError;

pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub mode: ObsMode,
    /// Number of annotated points (0 for raster mode).
    pub n_points: usize,
    pub input_dim: usize,
    pub encoder_hidden: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Maximum history length (tokens per sequence).
    pub history: usize,
    /// Actions predicted per token.
    pub chunk: usize,
    /// Temporal ensembling decay `m`.
    pub ensemble_decay: f64,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let err = |m: String| Err(PolicyError::Config(m));
        if self.input_dim == 0 || self.encoder_hidden == 0 || self.width == 0 {
            return err("input_dim, encoder_hidden and width must be positive".into());
        }
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return err(format!("width {} not divisible by heads {}", self.width, self.heads));
        }
        if self.history == 0 || self.chunk == 0 {
            return err("history and chunk must be at least 1".into());
        }
        if !(self.ensemble_decay >= 0.0) {
            return err(format!("ensemble decay must be >= 0, got {}", self.ensemble_decay));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn output_dim(&self) -> usize {
        self.chunk * ACTION_DIM
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ln {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    ln1: Ln,
    qkv: Lin,
    proj: Lin,
    ln2: Ln,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: [Lin; 3],
    pos: usize,
    blocks: Vec<BlockIdx>,
    ln_f: Ln,
    head: Lin,
}

enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Lin {
        let w = self.tensor(
            format!("{name}.weight"),
            (fan_in, fan_out),
            Init::Normal(gain / (fan_in as f64).sqrt()),
        );
        let b = self.tensor(format!("{name}.bias"), (1, fan_out), Init::Zeros);
        Lin { w, b }
    }

    fn layer_norm(&mut self, name: &str, width: usize) -> Ln {
        let g = self.tensor(format!("{name}.gamma"), (1, width), Init::Ones);
        let b = self.tensor(format!("{name}.beta"), (1, width), Init::Zeros);
        Ln { g, b }
    }
}

fn build_layout(c: &PolicyConfig) -> (Layout, Builder) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let w = c.width;
    let enc = [
        b.linear("encoder.0", c.input_dim, c.encoder_hidden, 1.0),
        b.linear("encoder.1", c.encoder_hidden, c.encoder_hidden, 1.0),
        b.linear("encoder.2", c.encoder_hidden, w, 1.0),
    ];
    let pos = b.tensor("pos_embedding".into(), (c.history, w), Init::Normal(0.02));
    let residual_gain = 1.0 / ((2 * c.layers.max(1)) as f64).sqrt();
    let blocks = (0..c.layers)
        .map(|l| BlockIdx {
            ln1: b.layer_norm(&format!("block{l}.ln1"), w),
            qkv: b.linear(&format!("block{l}.attn.qkv"), w, 3 * w, 1.0),
            proj: b.linear(&format!("block{l}.attn.proj"), w, w, residual_gain),
            ln2: b.layer_norm(&format!("block{l}.ln2"), w),
            fc1: b.linear(&format!("block{l}.mlp.fc1"), w, 4 * w, 1.0),
            fc2: b.linear(&format!("block{l}.mlp.fc2"), 4 * w, w, residual_gain),
        })
        .collect();
    let ln_f = b.layer_norm("ln_f", w);
    let head = b.linear("head", w, c.output_dim(), 0.1);
    (
        Layout {
            enc,
            pos,
            blocks,
            ln_f,
            head,
        },
        b,
    )
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Cache<T> {
    pub seq: usize,
    x: Array2<T>,
    e1_pre: Array2<T>,
    e1: Array2<T>,
    e2_pre: Array2<T>,
    e2: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    lnf: LnCache<T>,
    hf: Array2<T>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    qkv: Array2<T>,
    probs: Vec<Array2<T>>,
    att: Array2<T>,
    ln2: LnCache<T>,
    m: Array2<T>,
    f1_pre: Array2<T>,
    f1: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T: Scalar> {
    pub config: PolicyConfig,
    pub names: Vec<String>,
    pub params: Vec<Array2<T>>,
    pub obs_norm: Normalizer,
    pub act_norm: Normalizer,
    layout_cache: LayoutHandle,
}

/// Wrapper so `Policy` can derive `PartialEq` without comparing indices.
#[derive(Debug, Clone)]
struct LayoutHandle(Layout);

impl PartialEq for LayoutHandle {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

fn pair_mut<T>(v: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&mut a[i], &mut b[0])
}

impl<T: Scalar> Policy<T> {
    /// Freshly initialized policy with identity normalization.
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self, PolicyError> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&shape, init)| match init {
                Init::Zeros => Array2::zeros(shape),
                Init::Ones => Array2::ones(shape),
                Init::Normal(std) => Array2::from_shape_simple_fn(shape, || {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cast(z * std)
                }),
            })
            .collect();
        Ok(Self {
            obs_norm: Normalizer::identity(config.input_dim),
            act_norm: Normalizer::identity(ACTION_DIM),
            config,
            names: b.names,
            params,
            layout_cache: LayoutHandle(layout),
        })
    }

    /// Rebuilds a policy from stored tensors, checking names and shapes.
    pub fn from_parts(
        config: PolicyConfig,
        names: Vec<String>,
        params: Vec<Array2<T>>,
        obs_norm: Normalizer,
        act_norm: Normalizer,
    ) -> Result<Self, PolicyError> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        if names != b.names {
            return Err(PolicyError::Format("tensor names do not match configuration".into()));
        }
        for ((p, shape), name) in params.iter().zip(&b.shapes).zip(&names) {
            if p.dim() != *shape {
                return Err(PolicyError::Format(format!("tensor {name} has shape {:?}, expected {shape:?}", p.dim())));
            }
        }
        if obs_norm.dim() != config.input_dim || act_norm.dim() != ACTION_DIM {
            return Err(PolicyError::Format("normalization statistics have the wrong length".into()));
        }
        Ok(Self {
            config,
            names,
            params,
            obs_norm,
            act_norm,
            layout_cache: LayoutHandle(layout),
        })
    }

    fn layout(&self) -> &Layout {
        &self.layout_cache.0
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<T>> {
        self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect()
    }

    /// Converts to another scalar type (used for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Policy<U> {
        Policy {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.mapv(|v| cast::<U>(v.to_f64().expect("finite"))))
                .collect(),
            obs_norm: self.obs_norm.clone(),
            act_norm: self.act_norm.clone(),
            layout_cache: self.layout_cache.clone(),
        }
    }

    fn lin(&self, x: &ArrayView2<T>, l: Lin) -> Array2<T> {
        linear(x, &self.params[l.w], &self.params[l.b])
    }

    /// Encoder MLP on already-normalized inputs (one row per observation).
    pub fn encode_normalized(&self, x: &Array2<T>) -> Array2<T> {
        let e = &self.layout().enc;
        let e1 = gelu(&self.lin(&x.view(), e[0]));
        let e2 = gelu(&self.lin(&e1.view(), e[1]));
        self.lin(&e2.view(), e[2])
    }

    /// Token for one raw observation vector: `MLP((obs - mean) / std)`.
    pub fn encode(&self, obs: &[f64]) -> Result<Vec<T>, PolicyError> {
        let x = self.normalize_rows(&[obs])?;
        Ok(self.encode_normalized(&x).into_raw_vec_and_offset().0)
    }

    /// Jacobian `d token / d obs` for one raw observation, `W x input_dim`.
    pub fn encode_jacobian(&self, obs: &[f64]) -> Result<Array2<T>, PolicyError> {
        let x = self.normalize_rows(&[obs])?;
        let e = &self.layout().enc;
        let e1_pre = self.lin(&x.view(), e[0]);
        let e1 = gelu(&e1_pre);
        let e2_pre = self.lin(&e1.view(), e[1]);
        let e2 = gelu(&e2_pre);
        let w = self.config.width;
        let mut jac = Array2::zeros((w, self.config.input_dim));
        let mut scratch = self.zeros_like();
        for i in 0..w {
            let mut dy = Array2::zeros((1, w));
            dy[[0, i]] = T::one();
            let d = self.encoder_backward(&x, &e1_pre, &e1, &e2_pre, &e2, &dy, &mut scratch);
            for j in 0..self.config.input_dim {
                jac[[i, j]] = d[[0, j]] / cast(self.obs_norm.std[j]);
            }
        }
        Ok(jac)
    }

    /// Normalizes raw observation rows into a network input array.
    pub fn normalize_rows(&self, rows: &[&[f64]]) -> Result<Array2<T>, PolicyError> {
        let d = self.config.input_dim;
        let mut x = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(PolicyError::InputLength {
                    expected: d,
                    got: r.len(),
                });
            }
            for j in 0..d {
                x[[i, j]] = cast((r[j] - self.obs_norm.mean[j]) / self.obs_norm.std[j]);
            }
        }
        Ok(x)
    }

    /// Full forward pass. `x` holds normalized inputs, `seq` tokens per
    /// sequence. Output row `i` is the normalized action chunk of token `i`.
    pub fn forward(&self, x: &Array2<T>, seq: usize) -> Result<(Array2<T>, Cache<T>), PolicyError> {
        if seq == 0 || seq > self.config.history {
            return Err(PolicyError::HistoryLength {
                max: self.config.history,
                got: seq,
            });
        }
        if x.ncols() != self.config.input_dim {
            return Err(PolicyError::InputLength {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        assert_eq!(x.nrows() % seq, 0, "rows must be whole sequences");
        let lay = self.layout();
        let p = &self.params;
        let e1_pre = self.lin(&x.view(), lay.enc[0]);
        let e1 = gelu(&e1_pre);
        let e2_pre = self.lin(&e1.view(), lay.enc[1]);
        let e2 = gelu(&e2_pre);
        let mut h = self.lin(&e2.view(), lay.enc[2]);
        let pos = &p[lay.pos];
        for (i, mut row) in h.rows_mut().into_iter().enumerate() {
            row += &pos.row(i % seq);
        }
        let mut blocks = Vec::with_capacity(lay.blocks.len());
        for b in &lay.blocks {
            let (a, ln1) = layer_norm(&h, &p[b.ln1.g], &p[b.ln1.b]);
            let qkv = self.lin(&a.view(), b.qkv);
            let (att, probs) = causal_attention(&qkv, seq, self.config.heads);
            h += &self.lin(&att.view(), b.proj);
            let (m, ln2) = layer_norm(&h, &p[b.ln2.g], &p[b.ln2.b]);
            let f1_pre = self.lin(&m.view(), b.fc1);
            let f1 = gelu(&f1_pre);
            h += &self.lin(&f1.view(), b.fc2);
            blocks.push(BlockCache {
                ln1,
                a,
                qkv,
                probs,
                att,
                ln2,
                m,
                f1_pre,
                f1,
            });
        }
        let (hf, lnf) = layer_norm(&h, &p[lay.ln_f.g], &p[lay.ln_f.b]);
        let out = self.lin(&hf.view(), lay.head);
        Ok((
            out,
            Cache {
                seq,
                x: x.clone(),
                e1_pre,
                e1,
                e2_pre,
                e2,
                blocks,
                lnf,
                hf,
            },
        ))
    }

    fn lin_back(&self, x: &Array2<T>, l: Lin, dy: &Array2<T>, grads: &mut [Array2<T>]) -> Array2<T> {
        let (gw, gb) = pair_mut(grads, l.w, l.b);
        linear_backward(&x.view(), &self.params[l.w], dy, gw, gb)
    }

    fn ln_back(&self, cache: &LnCache<T>, l: Ln, dy: &Array2<T>, grads: &mut [Array2<T>]) -> Array2<T> {
        let (gg, gb) = pair_mut(grads, l.g, l.b);
        layer_norm_backward(cache, &self.params[l.g], dy, gg, gb)
    }

    #[allow(clippy::too_many_arguments)]
    fn encoder_backward(
        &self,
        x: &Array2<T>,
        e1_pre: &Array2<T>,
        e1: &Array2<T>,
        e2_pre: &Array2<T>,
        e2: &Array2<T>,
        dh: &Array2<T>,
        grads: &mut [Array2<T>],
    ) -> Array2<T> {
        let e = self.layout().enc;
        let de2 = self.lin_back(e2, e[2], dh, grads);
        let de2_pre = gelu_backward(e2_pre, &de2);
        let de1 = self.lin_back(e1, e[1], &de2_pre, grads);
        let de1_pre = gelu_backward(e1_pre, &de1);
        self.lin_back(x, e[0], &de1_pre, grads)
    }

    /// Accumulates parameter gradients of `sum(dout * out)` into `grads`.
    pub fn backward(&self, cache: &Cache<T>, dout: &Array2<T>, grads: &mut [Array2<T>]) {
        let lay = self.layout();
        let dhf = self.lin_back(&cache.hf, lay.head, dout, grads);
        let mut dh = self.ln_back(&cache.lnf, lay.ln_f, &dhf, grads);
        for (b, c) in lay.blocks.iter().zip(&cache.blocks).rev() {
            let df1 = self.lin_back(&c.f1, b.fc2, &dh, grads);
            let df1_pre = gelu_backward(&c.f1_pre, &df1);
            let dm = self.lin_back(&c.m, b.fc1, &df1_pre, grads);
            dh += &self.ln_back(&c.ln2, b.ln2, &dm, grads);
            let datt = self.lin_back(&c.att, b.proj, &dh, grads);
            let dqkv = causal_attention_backward(&c.qkv, &c.probs, &datt, cache.seq, self.config.heads);
            let da = self.lin_back(&c.a, b.qkv, &dqkv, grads);
            dh += &self.ln_back(&c.ln1, b.ln1, &da, grads);
        }
        {
            let gpos = &mut grads[lay.pos];
            for (i, row) in dh.rows().into_iter().enumerate() {
                let mut g = gpos.row_mut(i % cache.seq);
                g += &row;
            }
        }
        self.encoder_backward(&cache.x, &cache.e1_pre, &cache.e1, &cache.e2_pre, &cache.e2, &dh, grads);
    }

    /// Chunks for every token of one raw observation history (oldest
    /// first), denormalized to action units.
    pub fn predict(&self, history: &[&[f64]]) -> Result<Vec<Vec<[f64; ACTION_DIM]>>, PolicyError> {
        if history.is_empty() {
            return Err(PolicyError::HistoryLength {
                max: self.config.history,
                got: 0,
            });
        }
        let x = self.normalize_rows(history)?;
        let (out, _) = self.forward(&x, history.len())?;
        Ok(out
            .rows()
            .into_iter()
            .map(|row| {
                let raw: Vec<f64> = row.iter().map(|v| v.to_f64().expect("finite")).collect();
                self.act_norm
                    .denormalize(&raw)
                    .chunks_exact(ACTION_DIM)
                    .map(|a| [a[0], a[1], a[2], a[3]])
                    .collect()
            })
            .collect())
    }
}

/// Masked mean squared error and its gradient with respect to `out`.
pub fn masked_mse<T: Scalar>(out: &Array2<T>, target: &Array2<T>, mask: &Array2<T>) -> (T, Array2<T>) {
    let count = mask.sum().max(T::one());
    let diff = (out - target) * mask;
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / count;
    let grad = diff * (cast::<T>(2.0) / count);
    (loss, grad)
}

/// Rows of the token at position `t` in every sequence.
pub fn token_rows<T: Scalar>(out: &Array2<T>, seq: usize, t: usize) -> Array2<T> {
    out.slice(s![t..;seq, ..]).to_owned()
}

pub fn sum_squares<T: Scalar>(grads: &[Array2<T>]) -> T {
    grads.iter().map(|g| g.iter().map(|&v| v * v).sum::<T>()).sum()
}
