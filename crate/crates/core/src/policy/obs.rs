//! Encoder inputs: flattened 3D points, pairwise-distance graphs, or raw
//! raster pixels, plus frozen z-score statistics.

use serde::{Deserialize, Serialize};

use crate::sim::render::RasterImage;
use crate::vision::Point3DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    Point,
    Graph,
    Raster,
}

impl ObsMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObsMode::Point => "point",
            ObsMode::Graph => "graph",
            ObsMode::Raster => "raster",
        }
    }

    /// Encoder input length for `k` points or a `w x h` raster.
    pub fn input_dim(self, k: usize, raster: (u32, u32)) -> usize {
        match self {
            ObsMode::Point => 4 * k,
            ObsMode::Graph => k * k.saturating_sub(1) / 2 + k,
            ObsMode::Raster => (raster.0 * raster.1 * 3) as usize,
        }
    }
}

impl std::str::FromStr for ObsMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "point" => Ok(ObsMode::Point),
            "graph" => Ok(ObsMode::Graph),
            "raster" | "raster-baseline" | "raster_baseline" => Ok(ObsMode::Raster),
            other => Err(format!("unknown observation mode `{other}`")),
        }
    }
}

/// Upper-triangular pairwise distances, ordered by `(i < j)`.
pub fn graph_vector(points: &Point3DVector) -> Vec<f64> {
    let k = points.len();
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for i in 0..k {
        let a = points.point(i);
        for j in (i + 1)..k {
            let b = points.point(j);
            out.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt());
        }
    }
    out
}

fn validity(points: &Point3DVector) -> impl Iterator<Item = f64> + '_ {
    points.valid.iter().map(|&v| if v { 1.0 } else { 0.0 })
}

/// Point-mode features: `3K` coordinates then `K` validity flags.
pub fn point_features(points: &Point3DVector) -> Vec<f64> {
    points.values.iter().copied().chain(validity(points)).collect()
}

/// Graph-mode features: `K(K-1)/2` distances then `K` validity flags.
pub fn graph_features(points: &Point3DVector) -> Vec<f64> {
    graph_vector(points).into_iter().chain(validity(points)).collect()
}

pub fn raster_features(image: &RasterImage) -> Vec<f64> {
    image.rgb.iter().map(|&c| c as f64 / 255.0).collect()
}

pub fn features(mode: ObsMode, points: &Point3DVector) -> Vec<f64> {
    match mode {
        ObsMode::Point => point_features(points),
        ObsMode::Graph => graph_features(points),
        ObsMode::Raster => panic!("raster features come from images"),
    }
}

/// Per-dimension affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Per-dimension statistics; standard deviations are floored at
    /// `std_floor`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize, std_floor: f64) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for (i, &v) in r.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(std_floor))
            .collect();
        Self { mean, std }
    }

    /// One statistic per interleaved channel, broadcast to every dimension
    /// (`dim` must be a multiple of `channels`).
    pub fn fit_channels<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize, channels: usize, std_floor: f64) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for r in rows {
            for (i, &v) in r.iter().enumerate() {
                sum[i % channels] += v;
                sq[i % channels] += v * v;
            }
            n += r.len() / channels;
        }
        let n = n.max(1) as f64;
        let mean_c: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std_c: Vec<f64> = sq
            .iter()
            .zip(&mean_c)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(std_floor))
            .collect();
        Self {
            mean: (0..dim).map(|i| mean_c[i % channels]).collect(),
            std: (0..dim).map(|i| std_c[i % channels]).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Inputs longer than the statistics wrap around, so a chunk of
    /// actions normalizes with per-action statistics.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % self.dim()]) / self.std[i % self.dim()])
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % self.dim()] + self.mean[i % self.dim()])
            .collect()
    }
}
