//! Ray-cast renderer for the flat (2.5-D) scene.
//!
//! Every visible surface is horizontal: object tops at their `z_height`,
//! the gripper fingertips, and the table plane at z = 0. That makes exact
//! ray casting cheap, so visibility, the raster image and the depth image
//! all come from the same intersection routine.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::catalog::Descriptor;
use super::world::{WorldState, FINGER_RADIUS};

pub const RASTER_SIZE: u32 = 64;
const TABLE_COLOR: [u8; 3] = [214, 196, 160];
const FINGER_COLOR: [u8; 3] = [40, 40, 40];
/// Surfaces closer than this to a keypoint's depth do not occlude it.
const OCCLUSION_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeypointId {
    /// `None` for the gripper.
    pub object: Option<usize>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: KeypointId,
    pub u: f64,
    pub v: f64,
    pub z: f64,
    pub visible: bool,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8.
    pub rgb: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    /// Row-major camera-frame depth, meters.
    pub values: Vec<f32>,
}

impl DepthImage {
    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_index: usize,
    pub points: Vec<ProjectedPoint>,
    pub raster: RasterImage,
    pub depth: DepthImage,
}

impl Frame {
    pub fn visible_points(&self) -> impl Iterator<Item = &ProjectedPoint> {
        self.points.iter().filter(|p| p.visible)
    }

    pub fn point(&self, id: KeypointId) -> Option<&ProjectedPoint> {
        self.points.iter().find(|p| p.id == id)
    }
}

/// A horizontal surface: the union of planar footprints at height `z`.
struct Surface<'a> {
    z: f64,
    color: [u8; 3],
    kind: SurfaceKind<'a>,
}

enum SurfaceKind<'a> {
    Object(&'a super::world::ObjectInstance),
    Disc { x: f64, y: f64, r: f64 },
}

impl Surface<'_> {
    fn contains(&self, x: f64, y: f64) -> bool {
        match &self.kind {
            SurfaceKind::Object(o) => o.contains_world(x, y),
            SurfaceKind::Disc { x: cx, y: cy, r } => (x - cx).hypot(y - cy) <= *r,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Renderer {
    pub camera: CameraIntrinsics,
    pub raster_width: u32,
    pub raster_height: u32,
    /// Samples per raster cell along each axis for the color image.
    pub supersample: u32,
    gripper: (Descriptor, Descriptor),
}

/// Result of casting one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub color: [u8; 3],
}

impl Renderer {
    pub fn new(camera: CameraIntrinsics, gripper: (Descriptor, Descriptor)) -> Self {
        Self {
            camera,
            raster_width: RASTER_SIZE,
            raster_height: RASTER_SIZE,
            supersample: 2,
            gripper,
        }
    }

    fn surfaces<'a>(&self, state: &'a WorldState) -> Vec<Surface<'a>> {
        let mut out: Vec<Surface<'a>> = state
            .objects
            .iter()
            .map(|o| Surface {
                z: o.z_height,
                color: o.model.color,
                kind: SurfaceKind::Object(o),
            })
            .collect();
        for f in state.ee.fingers() {
            out.push(Surface {
                z: f.z,
                color: FINGER_COLOR,
                kind: SurfaceKind::Disc {
                    x: f.x,
                    y: f.y,
                    r: FINGER_RADIUS,
                },
            });
        }
        out
    }

    fn cast(&self, surfaces: &[Surface<'_>], origin: &Point3<f64>, dir: &Vector3<f64>) -> Hit {
        // table plane
        let mut best = Hit {
            depth: if dir.z < 0.0 { -origin.z / dir.z } else { f64::INFINITY },
            color: TABLE_COLOR,
        };
        for s in surfaces {
            if dir.z >= 0.0 {
                break;
            }
            let t = (s.z - origin.z) / dir.z;
            if t <= 0.0 || t >= best.depth {
                continue;
            }
            let p = origin + dir * t;
            if s.contains(p.x, p.y) {
                best = Hit {
                    depth: t,
                    color: s.color,
                };
            }
        }
        best
    }

    /// Depth and color seen through camera pixel `(u, v)`.
    pub fn cast_pixel(&self, state: &WorldState, u: f64, v: f64) -> Hit {
        let surfaces = self.surfaces(state);
        let (o, d) = self.camera.ray_world(u, v);
        self.cast(&surfaces, &o, &d)
    }

    pub fn render(&self, state: &WorldState, frame_index: usize) -> Frame {
        let surfaces = self.surfaces(state);
        let cam = &self.camera;
        let origin = cam.center();
        let keypoints = state.keypoints((&self.gripper.0, &self.gripper.1));
        let points = keypoints
            .into_iter()
            .map(|kp| {
                let id = KeypointId {
                    object: kp.object,
                    index: kp.index,
                };
                match cam.project(&kp.position) {
                    Some(px) => {
                        let in_frame = cam.in_bounds(px.u, px.v);
                        let visible = in_frame && {
                            let (_, d) = cam.ray_world(px.u, px.v);
                            self.cast(&surfaces, &origin, &d).depth >= px.z - OCCLUSION_EPS
                        };
                        ProjectedPoint {
                            id,
                            u: px.u,
                            v: px.v,
                            z: px.z,
                            visible,
                            descriptor: kp.descriptor,
                        }
                    }
                    None => ProjectedPoint {
                        id,
                        u: f64::NAN,
                        v: f64::NAN,
                        z: f64::NAN,
                        visible: false,
                        descriptor: kp.descriptor,
                    },
                }
            })
            .collect();
        let (raster, depth) = self.rasterize(&surfaces, self.raster_width, self.raster_height);
        Frame {
            frame_index,
            points,
            raster,
            depth,
        }
    }

    /// Full-frame RGB image at an arbitrary resolution (used for previews).
    pub fn render_rgb(&self, state: &WorldState, width: u32, height: u32) -> RasterImage {
        let surfaces = self.surfaces(state);
        self.rasterize(&surfaces, width, height).0
    }

    fn rasterize(&self, surfaces: &[Surface<'_>], w: u32, h: u32) -> (RasterImage, DepthImage) {
        let cam = &self.camera;
        let origin = cam.center();
        let sx = cam.width as f64 / w as f64;
        let sy = cam.height as f64 / h as f64;
        let ss = self.supersample.max(1);
        let mut rgb = Vec::with_capacity((w * h * 3) as usize);
        let mut depth = Vec::with_capacity((w * h) as usize);
        for j in 0..h {
            for i in 0..w {
                let mut acc = [0u32; 3];
                for a in 0..ss {
                    for b in 0..ss {
                        let u = (i as f64 + (b as f64 + 0.5) / ss as f64) * sx;
                        let v = (j as f64 + (a as f64 + 0.5) / ss as f64) * sy;
                        let (_, d) = cam.ray_world(u, v);
                        let hit = self.cast(surfaces, &origin, &d);
                        for c in 0..3 {
                            acc[c] += hit.color[c] as u32;
                        }
                    }
                }
                let n = ss * ss;
                for c in acc {
                    rgb.push(((c + n / 2) / n) as u8);
                }
                let (_, d) = cam.ray_world((i as f64 + 0.5) * sx, (j as f64 + 0.5) * sy);
                depth.push(self.cast(surfaces, &origin, &d).depth as f32);
            }
        }
        (
            RasterImage {
                width: w,
                height: h,
                rgb,
            },
            DepthImage {
                width: w,
                height: h,
                values: depth,
            },
        )
    }
}
