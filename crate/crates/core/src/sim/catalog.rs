//! Object library: semantic classes, per-instance geometry and the persistent
//! per-keypoint descriptors that stand in for learned image features.
//!
//! Every class owns an ordered label set. All instances of a class carry the
//! same labels in the same order; their descriptors are the class prototype
//! for the label plus a bounded perturbation. In-domain instances are
//! perturbed by at most [`IN_DOMAIN_NOISE`] of the catalog margin, novel
//! instances by exactly [`NOVEL_NOISE`] of it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DESCRIPTOR_DIM: usize = 32;
/// Relative descriptor perturbation bound for training-set instances.
pub const IN_DOMAIN_NOISE: f64 = 0.1;
/// Relative descriptor perturbation for held-out instances.
pub const NOVEL_NOISE: f64 = 0.3;

const CATALOG_SEED: u64 = 0x5EED_CA7A;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptor(pub Arc<[f64]>);

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values.into())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.0.iter().map(|v| v / n).collect())
    }

    /// `1 - cos(angle)`; 0 for identical directions, 2 for opposite.
    pub fn cosine_distance(&self, other: &Descriptor) -> f64 {
        debug_assert_eq!(self.0.len(), other.0.len());
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        let denom = (na * nb).sqrt();
        if denom == 0.0 {
            return 1.0;
        }
        (1.0 - dot / denom).max(0.0)
    }

    pub fn euclidean(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One part of an object's top-down footprint in the model frame (meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapePart {
    Disc { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl ShapePart {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        ShapePart::Polygon {
            vertices: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            ShapePart::Disc { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius
            }
            ShapePart::Polygon { vertices } => {
                // even-odd crossing test
                let mut inside = false;
                let n = vertices.len();
                let mut j = n - 1;
                for i in 0..n {
                    let (xi, yi) = (vertices[i][0], vertices[i][1]);
                    let (xj, yj) = (vertices[j][0], vertices[j][1]);
                    if (yi > p[1]) != (yj > p[1]) && p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }

    /// Radius of a disc centered at the model origin enclosing this part.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            ShapePart::Disc { center, radius } => center[0].hypot(center[1]) + radius,
            ShapePart::Polygon { vertices } => vertices
                .iter()
                .map(|v| v[0].hypot(v[1]))
                .fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelKeypoint {
    pub label: String,
    /// Model-frame planar position, meters.
    pub position: [f64; 2],
    pub descriptor: Descriptor,
    /// Whether the gripper may snap-grasp the object at this point.
    pub grasp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub model_id: String,
    pub class: String,
    pub keypoints: Vec<ModelKeypoint>,
    pub shape: Vec<ShapePart>,
    pub color: [u8; 3],
    pub graspable: bool,
    /// Rotates about the model origin instead of following the gripper.
    pub hinged: bool,
    pub novel: bool,
    /// Height of the top surface above the supporting level.
    pub height: f64,
}

impl ObjectModel {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.shape.iter().any(|s| s.contains(p))
    }

    pub fn keypoint(&self, label: &str) -> Option<&ModelKeypoint> {
        self.keypoints.iter().find(|k| k.label == label)
    }

    pub fn grasp_keypoint(&self) -> Option<&ModelKeypoint> {
        self.keypoints.iter().find(|k| k.grasp)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.shape
            .iter()
            .map(ShapePart::bounding_radius)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectSet {
    InDomain,
    Novel,
}

impl ObjectSet {
    pub fn name(self) -> &'static str {
        match self {
            ObjectSet::InDomain => "in-domain",
            ObjectSet::Novel => "novel",
        }
    }
}

/// Semantic class: ordered labels and their prototype descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class: String,
    pub labels: Vec<String>,
    pub descriptors: Vec<Descriptor>,
}

/// Semantic class of a label: the prefix before the first underscore.
pub fn class_of(label: &str) -> &str {
    label.split('_').next().unwrap_or(label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub descriptor_dim: usize,
    pub classes: BTreeMap<String, ClassPrototype>,
    pub models: Vec<Arc<ObjectModel>>,
    /// Minimum Euclidean distance between prototype descriptors of distinct labels.
    pub margin: f64,
    /// Minimum cosine distance between prototype descriptors of distinct labels.
    pub min_label_distance: f64,
}

const CLASS_LABELS: &[(&str, &[&str])] = &[
    ("gripper", &["gripper_left", "gripper_right"]),
    ("mug", &["mug_rim", "mug_handle", "mug_base"]),
    ("plate", &["plate_center", "plate_rim", "plate_far"]),
    ("bottle", &["bottle_cap", "bottle_body", "bottle_base"]),
    ("broom", &["broom_handle", "broom_neck", "broom_head"]),
    ("board", &["board_left", "board_center", "board_right"]),
    ("door", &["door_hinge", "door_handle", "door_edge"]),
    ("box", &["box_corner", "box_center"]),
    ("can", &["can_top"]),
    ("fruit", &["fruit_tip", "fruit_stem"]),
];

/// (class, in-domain count, novel count)
const INSTANCE_COUNTS: &[(&str, usize, usize)] = &[
    ("mug", 4, 3),
    ("plate", 3, 2),
    ("bottle", 2, 2),
    ("broom", 2, 1),
    ("board", 1, 1),
    ("door", 2, 1),
    ("box", 2, 0),
    ("can", 2, 0),
    ("fruit", 2, 0),
];

pub const DISTRACTOR_CLASSES: &[&str] = &["box", "can", "fruit"];

const IN_DOMAIN_PALETTE: &[[u8; 3]] = &[
    [200, 40, 40],
    [40, 90, 200],
    [230, 200, 40],
    [60, 170, 80],
];
const NOVEL_PALETTE: &[[u8; 3]] = &[[150, 60, 200], [240, 130, 20], [30, 200, 200]];
const DISTRACTOR_PALETTE: &[[u8; 3]] = &[[120, 80, 40], [90, 90, 90], [250, 160, 180]];

impl Catalog {
    /// The fixed catalog used by every task. Deterministic.
    pub fn standard() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(CATALOG_SEED);
        let mut classes = BTreeMap::new();
        for (class, labels) in CLASS_LABELS {
            let descriptors = labels
                .iter()
                .map(|_| random_unit(&mut rng, DESCRIPTOR_DIM))
                .collect();
            classes.insert(
                class.to_string(),
                ClassPrototype {
                    class: class.to_string(),
                    labels: labels.iter().map(|s| s.to_string()).collect(),
                    descriptors,
                },
            );
        }
        let all: Vec<&Descriptor> = classes.values().flat_map(|c| c.descriptors.iter()).collect();
        let mut margin = f64::INFINITY;
        let mut min_label_distance = f64::INFINITY;
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                margin = margin.min(all[i].euclidean(all[j]));
                min_label_distance = min_label_distance.min(all[i].cosine_distance(all[j]));
            }
        }

        let mut catalog = Catalog {
            descriptor_dim: DESCRIPTOR_DIM,
            classes,
            models: Vec::new(),
            margin,
            min_label_distance,
        };
        for &(class, n_in, n_novel) in INSTANCE_COUNTS {
            for i in 0..n_in {
                let m = catalog.build_instance(&mut rng, class, i, ObjectSet::InDomain);
                catalog.models.push(Arc::new(m));
            }
            for i in 0..n_novel {
                let m = catalog.build_instance(&mut rng, class, i, ObjectSet::Novel);
                catalog.models.push(Arc::new(m));
            }
        }
        catalog
    }

    /// Threshold above which a descriptor match is rejected.
    pub fn reject_threshold(&self) -> f64 {
        0.5 * self.min_label_distance
    }

    pub fn prototype(&self, class: &str) -> Option<&ClassPrototype> {
        self.classes.get(class)
    }

    pub fn instances(&self, class: &str, set: ObjectSet) -> Vec<Arc<ObjectModel>> {
        self.models
            .iter()
            .filter(|m| m.class == class && m.novel == (set == ObjectSet::Novel))
            .cloned()
            .collect()
    }

    pub fn instance(&self, class: &str, set: ObjectSet, index: usize) -> Option<Arc<ObjectModel>> {
        self.instances(class, set).get(index).cloned()
    }

    pub fn model(&self, model_id: &str) -> Option<Arc<ObjectModel>> {
        self.models.iter().find(|m| m.model_id == model_id).cloned()
    }

    /// Gripper finger descriptors (left, right).
    pub fn gripper_descriptors(&self) -> (Descriptor, Descriptor) {
        let g = &self.classes["gripper"];
        (g.descriptors[0].clone(), g.descriptors[1].clone())
    }

    /// Unit descriptor at Euclidean (chord) distance exactly
    /// `relative * margin` from `base`, in a random tangent direction.
    pub fn perturb(&self, rng: &mut impl Rng, base: &Descriptor, relative: f64) -> Descriptor {
        let b = base.normalized();
        let dir = random_unit(rng, b.0.len());
        let along: f64 = b.0.iter().zip(dir.0.iter()).map(|(x, y)| x * y).sum();
        let tangent = Descriptor::new(b.0.iter().zip(dir.0.iter()).map(|(x, d)| d - along * x).collect()).normalized();
        let chord = (relative * self.margin).min(2.0);
        let theta = 2.0 * (0.5 * chord).asin();
        Descriptor::new(
            b.0.iter()
                .zip(tangent.0.iter())
                .map(|(x, t)| theta.cos() * x + theta.sin() * t)
                .collect(),
        )
    }

    fn build_instance(
        &self,
        rng: &mut ChaCha8Rng,
        class: &str,
        index: usize,
        set: ObjectSet,
    ) -> ObjectModel {
        let novel = set == ObjectSet::Novel;
        let distractor = DISTRACTOR_CLASSES.contains(&class);
        // Novel geometry is drawn from a shifted range so that no novel
        // instance coincides with a training instance.
        let mut u = |lo: f64, hi: f64, lo_n: f64, hi_n: f64| {
            if novel {
                rng.random_range(lo_n..hi_n)
            } else {
                rng.random_range(lo..hi)
            }
        };
        let (shape, points, height): (Vec<ShapePart>, Vec<([f64; 2], bool)>, f64) = match class {
            "mug" => {
                let r = u(0.036, 0.042, 0.030, 0.048);
                let hl = u(0.022, 0.026, 0.018, 0.032);
                let h = u(0.09, 0.10, 0.08, 0.11);
                (
                    vec![
                        ShapePart::Disc {
                            center: [0.0, 0.0],
                            radius: r,
                        },
                        ShapePart::rect(r - 0.006, -0.009, r + hl, 0.009),
                    ],
                    vec![([-0.55 * r, 0.0], false), ([r + 0.6 * hl, 0.0], true), ([0.0, 0.0], false)],
                    h,
                )
            }
            "plate" => {
                let r = u(0.075, 0.085, 0.065, 0.095);
                (
                    vec![ShapePart::Disc {
                        center: [0.0, 0.0],
                        radius: r,
                    }],
                    vec![([0.0, 0.0], false), ([0.0, -0.85 * r], true), ([0.0, 0.8 * r], false)],
                    0.015,
                )
            }
            "bottle" => {
                let l = u(0.15, 0.17, 0.13, 0.19);
                let w = u(0.045, 0.05, 0.04, 0.056);
                (
                    vec![
                        ShapePart::rect(-l / 2.0, -w / 2.0, l / 2.0 - 0.03, w / 2.0),
                        ShapePart::rect(l / 2.0 - 0.03, -w / 4.0, l / 2.0, w / 4.0),
                    ],
                    vec![([0.44 * l, 0.0], false), ([0.0, 0.0], true), ([-0.42 * l, 0.0], false)],
                    w,
                )
            }
            "broom" => {
                let hl = u(0.16, 0.18, 0.14, 0.2);
                let hw = u(0.07, 0.08, 0.06, 0.09);
                (
                    vec![
                        ShapePart::rect(-0.008, -hl, 0.008, 0.0),
                        ShapePart::rect(-hw / 2.0, 0.0, hw / 2.0, 0.03),
                    ],
                    vec![([0.0, -0.8 * hl], true), ([0.0, -0.1 * hl], false), ([0.0, 0.018], false)],
                    0.02,
                )
            }
            "board" => {
                let w = u(0.2, 0.22, 0.18, 0.24);
                (
                    vec![ShapePart::rect(-w / 2.0, -0.06, w / 2.0, 0.06)],
                    vec![([-0.4 * w, 0.0], false), ([0.0, 0.0], false), ([0.4 * w, 0.0], false)],
                    0.01,
                )
            }
            "door" => {
                let w = u(0.16, 0.18, 0.14, 0.2);
                (
                    vec![ShapePart::rect(0.0, -0.012, w, 0.012)],
                    vec![([0.015, 0.0], false), ([0.8 * w, 0.0], true), ([0.97 * w, 0.0], false)],
                    0.12,
                )
            }
            "box" => {
                let s = u(0.04, 0.06, 0.04, 0.06);
                (
                    vec![ShapePart::rect(-s, -s, s, s)],
                    vec![([-0.7 * s, -0.7 * s], false), ([0.0, 0.0], false)],
                    0.06,
                )
            }
            "can" => {
                let r = u(0.025, 0.035, 0.025, 0.035);
                (
                    vec![ShapePart::Disc {
                        center: [0.0, 0.0],
                        radius: r,
                    }],
                    vec![([0.0, 0.0], false)],
                    0.11,
                )
            }
            "fruit" => {
                let r = u(0.03, 0.04, 0.03, 0.04);
                (
                    vec![ShapePart::Disc {
                        center: [0.0, 0.0],
                        radius: r,
                    }],
                    vec![([0.6 * r, 0.0], false), ([-0.6 * r, 0.0], false)],
                    0.05,
                )
            }
            other => unreachable!("no geometry for class {other}"),
        };
        let proto = &self.classes[class];
        let noise = |rng: &mut ChaCha8Rng| {
            if novel {
                NOVEL_NOISE
            } else {
                rng.random_range(0.0..IN_DOMAIN_NOISE)
            }
        };
        let keypoints = proto
            .labels
            .iter()
            .zip(proto.descriptors.iter())
            .zip(points)
            .map(|((label, base), (position, grasp))| {
                let rel = noise(rng);
                ModelKeypoint {
                    label: label.clone(),
                    position,
                    descriptor: self.perturb(rng, base, rel),
                    grasp,
                }
            })
            .collect();
        let color = if distractor {
            DISTRACTOR_PALETTE[index % DISTRACTOR_PALETTE.len()]
        } else if novel {
            NOVEL_PALETTE[index % NOVEL_PALETTE.len()]
        } else {
            IN_DOMAIN_PALETTE[index % IN_DOMAIN_PALETTE.len()]
        };
        ObjectModel {
            model_id: format!("{class}/{}{index}", if novel { "novel-" } else { "" }),
            class: class.to_string(),
            keypoints,
            shape,
            color,
            graspable: !distractor && class != "board",
            hinged: class == "door",
            novel,
            height,
        }
    }
}

pub(crate) fn random_unit(rng: &mut impl Rng, dim: usize) -> Descriptor {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Descriptor::new(v).normalized()
}
