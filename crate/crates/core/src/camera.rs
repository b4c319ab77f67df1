//! Pinhole camera model shared by the renderer, the viewing encodings, and
//! the depth-alignment pipeline.
//!
//! # Coordinate conventions
//!
//! Two frames appear in this toolkit, one per sensor role:
//!
//! * **Camera frame** (renderer, solver, viewing encodings): the camera sits
//!   at the origin and looks along `-z`, so scene points have `z < 0` and the
//!   per-pixel surface-to-camera direction `v` has `v_z > 0`. At the
//!   principal point `v = (0, 0, 1)`, which is the orthographic limit.
//!   Camera-facing normals satisfy `n . v > 0`.
//! * **Depth frame** (ground-truth preparation): depth is positive along the
//!   pixel ray, so `p = depth * ((u - cx)/fx, (r - cy)/fy, 1)` with `z > 0`,
//!   and camera-facing normals satisfy `n . (-p/|p|) > 0`.
//!
//! Both frames use `x` along growing pixel column `u` and `y` along growing
//! pixel row `r`.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={0}, fy={1}")]
    BadFocal(f64, f64),
    #[error("rotation axis-angle magnitude must be < pi, got {0}")]
    BadRotation(f64),
}

/// Pinhole intrinsics plus a 6-DoF rigid transform to a partner sensor.
///
/// The extrinsics map points in this camera's frame into the partner
/// (polarization) camera's frame: `p' = R(rotation_axis_angle) * p + t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub rotation_axis_angle: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(CameraError::BadFocal(self.fx, self.fy));
        }
        let angle = Vector3::from(self.rotation_axis_angle).norm();
        if angle >= std::f64::consts::PI {
            return Err(CameraError::BadRotation(angle));
        }
        Ok(())
    }

    /// Intrinsics-only model with identity extrinsics.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation_axis_angle: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation_axis_angle))
    }

    pub fn translation_vec(&self) -> Vec3 {
        Vector3::from(self.translation)
    }

    /// Apply the extrinsics: map a point from this camera's frame into the
    /// partner frame.
    pub fn transform_to_partner(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation_vec()
    }

    /// Depth-frame back-projection: `depth * ((u-cx)/fx, (r-cy)/fy, 1)`.
    pub fn unproject_depth(&self, u: f64, r: f64, depth: f64) -> Vec3 {
        Vector3::new(
            depth * (u - self.cx) / self.fx,
            depth * (r - self.cy) / self.fy,
            depth,
        )
    }

    /// Depth-frame projection, the inverse of [`Self::unproject_depth`].
    /// Returns `(u, r)` pixel coordinates; the caller checks bounds.
    pub fn project_depth(&self, p: &Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Camera-frame surface-to-camera direction for pixel `(u, r)`:
    /// `normalize(-(u-cx)/fx, -(r-cy)/fy, 1)`. The principal point maps to
    /// `(0, 0, 1)`.
    pub fn view_direction(&self, u: f64, r: f64) -> Vec3 {
        Vector3::new(-(u - self.cx) / self.fx, -(r - self.cy) / self.fy, 1.0).normalize()
    }
}
