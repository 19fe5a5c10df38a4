//! Depth providers and pinhole back-projection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::sim::CameraIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Camera,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthProvider {
    pub mode: DepthMode,
    /// Meters.
    pub noise_sigma: f64,
    pub bias_scale: f64,
    pub seed: u64,
}

impl DepthProvider {
    pub fn camera() -> Self {
        Self {
            mode: DepthMode::Camera,
            noise_sigma: 0.0,
            bias_scale: 1.0,
            seed: 0,
        }
    }

    pub fn predicted(bias_scale: f64, noise_sigma: f64, seed: u64) -> Self {
        Self {
            mode: DepthMode::Predicted,
            noise_sigma,
            bias_scale,
            seed,
        }
    }

    /// Depth reported for point `index` in frame `frame` whose true depth
    /// is `z`. Noise is a pure function of `(seed, frame, index)`.
    pub fn depth(&self, z: f64, frame: usize, index: usize) -> f64 {
        match self.mode {
            DepthMode::Camera => z,
            DepthMode::Predicted => {
                let mut out = z * self.bias_scale;
                if self.noise_sigma > 0.0 {
                    let stream = self.seed ^ ((frame as u64) << 32) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    let mut rng = ChaCha8Rng::seed_from_u64(stream);
                    let normal = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
                    out += normal.sample(&mut rng);
                }
                out
            }
        }
    }
}

/// Camera-frame 3D point of pixel `(u, v)` at depth `z`; `None` unless
/// `z > 0`.
pub fn back_project_pixel(cam: &CameraIntrinsics, u: f64, v: f64, z: f64) -> Option<[f64; 3]> {
    if !(z > 0.0 && z.is_finite()) {
        return None;
    }
    Some([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
}

/// Flattened `K x (X, Y, Z)` camera-frame points in annotation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point3DVector {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Point3DVector {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.values[3 * i], self.values[3 * i + 1], self.values[3 * i + 2]]
    }
}

/// Back-projects `points` (`(u, v, depth)` with `None` for missing depth).
///
/// Points without a usable depth are flagged invalid and keep their entry
/// in `held`; valid points overwrite it. `held` starts as `None`
/// (reported as the origin) until the first valid measurement.
pub fn back_project(
    cam: &CameraIntrinsics,
    points: &[(f64, f64, Option<f64>)],
    held: &mut Vec<Option<[f64; 3]>>,
) -> Point3DVector {
    held.resize(points.len(), None);
    let mut values = Vec::with_capacity(3 * points.len());
    let mut valid = Vec::with_capacity(points.len());
    for (i, &(u, v, z)) in points.iter().enumerate() {
        let p = z.and_then(|z| back_project_pixel(cam, u, v, z));
        if let Some(p) = p {
            held[i] = Some(p);
        }
        values.extend_from_slice(&held[i].unwrap_or([0.0; 3]));
        valid.push(p.is_some());
    }
    Point3DVector { values, valid }
}
