//! Layer primitives with explicit backward passes. Activations are 2-D
//! arrays with one row per token.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::scalar::{cast, Scalar};

pub fn linear<T: Scalar>(x: &ArrayView2<T>, w: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates parameter gradients and returns the input gradient.
pub fn linear_backward<T: Scalar>(
    x: &ArrayView2<T>,
    w: &Array2<T>,
    dy: &Array2<T>,
    gw: &mut Array2<T>,
    gb: &mut Array2<T>,
) -> Array2<T> {
    general_mat_mul(T::one(), &x.t(), dy, T::one(), gw);
    *gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let k: T = cast(GELU_K);
    let c: T = cast(GELU_C);
    let half: T = cast(0.5);
    x.mapv(|v| half * v * (T::one() + (k * (v + c * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Scalar>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let k: T = cast(GELU_K);
    let c: T = cast(GELU_C);
    let half: T = cast(0.5);
    let three: T = cast(3.0);
    let mut dx = Array2::zeros(x.raw_dim());
    Zip::from(&mut dx).and(x).and(dy).for_each(|d, &v, &g| {
        let t = (k * (v + c * v * v * v)).tanh();
        let dt = (T::one() - t * t) * k * (T::one() + three * c * v * v);
        *d = g * (half * (T::one() + t) + half * v * dt);
    });
    dx
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LnCache<T> {
    pub xhat: Array2<T>,
    pub inv_std: Array1<T>,
}

pub fn layer_norm<T: Scalar>(x: &Array2<T>, gamma: &Array2<T>, beta: &Array2<T>) -> (Array2<T>, LnCache<T>) {
    let n = x.ncols();
    let nf: T = cast(n as f64);
    let eps: T = cast(LN_EPS);
    let mut xhat = Array2::zeros(x.raw_dim());
    let mut inv_std = Array1::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.iter().copied().sum::<T>() / nf;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let inv = T::one() / (var + eps).sqrt();
        inv_std[i] = inv;
        for (o, &v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
            *o = (v - mean) * inv;
        }
    }
    let mut y = &xhat * gamma;
    y += beta;
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LnCache<T>,
    gamma: &Array2<T>,
    dy: &Array2<T>,
    ggamma: &mut Array2<T>,
    gbeta: &mut Array2<T>,
) -> Array2<T> {
    *ggamma += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *gbeta += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gamma;
    let nf: T = cast(dy.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = dh.iter().copied().sum::<T>() / nf;
        let m2 = dh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / nf;
        let inv = cache.inv_std[i];
        for ((o, &a), &b) in dx.row_mut(i).iter_mut().zip(dh.iter()).zip(xh.iter()) {
            *o = inv * (a - m1 - b * m2);
        }
    }
    dx
}

/// Causal multi-head self-attention core (projections excluded).
///
/// `qkv` has `3W` columns laid out `[Q | K | V]`; rows are grouped into
/// sequences of `seq` tokens. Returns the concatenated head outputs and
/// the attention probabilities per (sequence, head).
pub fn causal_attention<T: Scalar>(qkv: &Array2<T>, seq: usize, heads: usize) -> (Array2<T>, Vec<Array2<T>>) {
    let width = qkv.ncols() / 3;
    let dh = width / heads;
    let scale: T = cast(1.0 / (dh as f64).sqrt());
    let n_seq = qkv.nrows() / seq;
    let mut out = Array2::zeros((qkv.nrows(), width));
    let mut probs = Vec::with_capacity(n_seq * heads);
    for b in 0..n_seq {
        let rows = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![rows.clone(), width + h * dh..width + (h + 1) * dh]);
            let v = qkv.slice(s![rows.clone(), 2 * width + h * dh..2 * width + (h + 1) * dh]);
            let mut p = q.dot(&k.t());
            for i in 0..seq {
                let mut row = p.row_mut(i);
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    row[j] *= scale;
                    max = max.max(row[j]);
                }
                let mut sum = T::zero();
                for j in 0..=i {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                }
                for j in 0..seq {
                    row[j] = if j <= i { row[j] / sum } else { T::zero() };
                }
            }
            out.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&p.dot(&v));
            probs.push(p);
        }
    }
    (out, probs)
}

pub fn causal_attention_backward<T: Scalar>(
    qkv: &Array2<T>,
    probs: &[Array2<T>],
    dout: &Array2<T>,
    seq: usize,
    heads: usize,
) -> Array2<T> {
    let width = qkv.ncols() / 3;
    let dh = width / heads;
    let scale: T = cast(1.0 / (dh as f64).sqrt());
    let n_seq = qkv.nrows() / seq;
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for b in 0..n_seq {
        let rows = b * seq..(b + 1) * seq;
        for h in 0..heads {
            let p = &probs[b * heads + h];
            let q = qkv.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![rows.clone(), width + h * dh..width + (h + 1) * dh]);
            let v = qkv.slice(s![rows.clone(), 2 * width + h * dh..2 * width + (h + 1) * dh]);
            let dout_h = dout.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
            let dv = p.t().dot(&dout_h);
            let dp = dout_h.dot(&v.t());
            let mut ds = Array2::zeros((seq, seq));
            for i in 0..seq {
                let dot: T = (0..=i).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                for j in 0..=i {
                    ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);
            dqkv.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]).assign(&dq);
            dqkv.slice_mut(s![rows.clone(), width + h * dh..width + (h + 1) * dh]).assign(&dk);
            dqkv.slice_mut(s![rows.clone(), 2 * width + h * dh..2 * width + (h + 1) * dh]).assign(&dv);
        }
    }
    dqkv
}
