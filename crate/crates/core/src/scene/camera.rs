use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose_serde, Pose, Ray, Vec3};

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its centre at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

fn default_rate() -> f64 {
    30.0
}

/// Camera with optical-frame convention: x right, y down, z forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// Pose of the camera optical frame in base_link.
    #[serde(with = "pose_serde")]
    pub extrinsics: Pose,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

impl Default for CameraModel {
    /// Above and behind the user, looking down at the desk centre.
    fn default() -> Self {
        CameraModel {
            intrinsics: Intrinsics::default(),
            extrinsics: CameraModel::look_at(
                Point3::new(1.25, -0.15, 1.0),
                Point3::new(0.45, -0.15, 0.0),
            ),
            rate: 30.0,
        }
    }
}

impl CameraModel {
    /// Optical-frame pose at `eye` looking at `target`, image x kept horizontal.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Pose {
        let z = (target - eye).normalize();
        let x = z.cross(&Vec3::z()).normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
        let r = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(m));
        Pose::from_parts(nalgebra::Translation3::from(eye.coords), r)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if !(k.cx > 0.0 && k.cx < k.width as f64 && k.cy > 0.0 && k.cy < k.height as f64) {
            return Err(Error::invalid("camera principal point must lie inside the image"));
        }
        if !(self.rate > 0.0) {
            return Err(Error::invalid("camera rate must be positive"));
        }
        let n = self.extrinsics.rotation.quaternion().norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera extrinsics quaternion is not unit-norm"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    /// Projects a camera-frame point to sub-pixel coordinates; `None` behind the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
    }

    pub fn project_world(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        self.project(&self.world_to_camera(p))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.intrinsics.width as f64 && v < self.intrinsics.height as f64
    }

    /// Unnormalized camera-frame direction through pixel `(u, v)` with unit z.
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0)
    }

    /// World-frame ray through the centre of pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Ray {
        let d = self.extrinsics.rotation * self.pixel_direction(u, v);
        Ray::new(self.origin(), d)
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.extrinsics.translation.vector)
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsics.inverse_transform_point(p)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsics * p
    }

    pub fn period(&self) -> f64 {
        1.0 / self.rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_ray_reprojects() {
        let cam = CameraModel::default();
        for (u, v) in [(0.0, 0.0), (320.0, 240.0), (639.0, 17.0), (101.0, 479.0)] {
            let r = cam.pixel_ray(u, v);
            let p = r.at(1.3);
            let (pu, pv) = cam.project_world(&p).unwrap();
            assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
        }
    }

    #[test]
    fn default_camera_looks_at_desk() {
        let cam = CameraModel::default();
        let (u, v) = cam.project_world(&Point3::new(0.45, -0.15, 0.0)).unwrap();
        assert!((u - 320.0).abs() < 1e-9 && (v - 240.0).abs() < 1e-9);
        let right = cam.extrinsics.rotation * Vec3::x();
        assert!(right.z.abs() < 1e-12);
        assert!(cam.validate().is_ok());
        let mut bad = cam.clone();
        bad.intrinsics.cx = 700.0;
        assert!(bad.validate().is_err());
    }
}
