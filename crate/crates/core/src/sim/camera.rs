//! Pinhole camera model used by the renderer and by back-projection.
//!
//! Camera frame follows the usual vision convention: +x right, +y down,
//! +z along the optical axis. Pixel coordinates are continuous, with the
//! pixel `(i, j)` covering `[i, i + 1) x [j, j + 1)`.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Rigid transform taking world coordinates into the camera frame.
    pub extrinsic: Isometry3<f64>,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: Isometry3<f64>,
    ) -> Result<Self, SimError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SimError::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(SimError::InvalidCamera(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(SimError::InvalidCamera(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, with world `up` mapping to
    /// image-up (camera -y).
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, SimError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let translation = -(rotation * eye.coords);
        let extrinsic = Isometry3::from_parts(Translation3::from(translation), rotation);
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            extrinsic,
        )
    }

    /// Fixed third-person camera over the tabletop workspace, 512x512.
    pub fn tabletop() -> Self {
        Self::look_at(
            Point3::new(0.45, -0.55, 0.70),
            Point3::new(0.45, 0.05, 0.02),
            Vector3::z(),
            560.0,
            560.0,
            512,
            512,
        )
        .expect("tabletop camera is valid")
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.transform_point(p)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.inverse_transform_point(p)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        self.camera_to_world(&Point3::origin())
    }

    /// Projects a camera-frame point. Returns `None` behind the camera.
    pub fn project_camera(&self, p: &Point3<f64>) -> Option<PixelDepth> {
        if p.z <= 0.0 {
            return None;
        }
        Some(PixelDepth {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            z: p.z,
        })
    }

    pub fn project(&self, world: &Point3<f64>) -> Option<PixelDepth> {
        self.project_camera(&self.world_to_camera(world))
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Unit-depth direction of the ray through pixel `(u, v)`, camera frame.
    pub fn ray_camera(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// World-frame ray through `(u, v)`; the direction is scaled so that one
    /// unit along it advances one unit of camera depth.
    pub fn ray_world(&self, u: f64, v: f64) -> (Point3<f64>, Vector3<f64>) {
        let dir = self.extrinsic.rotation.inverse() * self.ray_camera(u, v);
        (self.center(), dir)
    }
}

/// Pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDepth {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_intrinsics() {
        let iso = Isometry3::identity();
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4, iso).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4, iso).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, -0.5, 4, 4, iso).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.9, 4, 4, iso).is_ok());
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = CameraIntrinsics::tabletop();
        let (origin, dir) = cam.ray_world(cam.cx, cam.cy);
        let p = origin + dir * 0.8;
        let px = cam.project(&p).unwrap();
        assert!((px.u - cam.cx).abs() < 1e-9);
        assert!((px.v - cam.cy).abs() < 1e-9);
        assert!((px.z - 0.8).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_none() {
        let cam = CameraIntrinsics::tabletop();
        let behind = cam.camera_to_world(&Point3::new(0.0, 0.0, -1.0));
        assert!(cam.project(&behind).is_none());
    }

    #[test]
    fn tabletop_sees_workspace() {
        let cam = CameraIntrinsics::tabletop();
        for &(x, y) in &[(0.2, -0.2), (0.7, -0.2), (0.2, 0.32), (0.7, 0.32)] {
            let px = cam.project(&Point3::new(x, y, 0.0)).unwrap();
            assert!(cam.in_bounds(px.u, px.v), "({x},{y}) -> {px:?}");
        }
        // world up is image up
        let lo = cam.project(&Point3::new(0.45, 0.05, 0.0)).unwrap();
        let hi = cam.project(&Point3::new(0.45, 0.05, 0.2)).unwrap();
        assert!(hi.v < lo.v);
    }
}
