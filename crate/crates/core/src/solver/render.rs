//! Synthetic polarimetric renderer: analytic scenes rendered through the
//! forward model (geometry -> viewing angle -> DoP/AoP -> polarizer stack),
//! used as the ground-truth oracle for the solver and the network.
//!
//! Scenes live in the camera frame (`z < 0` in front of the camera, see
//! [`crate::camera`]). Orthographic rays use the intrinsics as a
//! pixels-per-unit scale for the view window.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DirectionMap, NormalMap};
use crate::camera::CameraModel;
use crate::fresnel::{
    aop_from_normal_perspective, dop, viewing_angle, ReflectionType, GRAZING_CUTOFF,
};
use crate::image::FloatMap;
use crate::polar::{synthesize, PolarizerStack};
use crate::Vec3;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera: {0}")]
    Camera(#[from] crate::camera::CameraError),
    #[error("scene has no objects")]
    EmptyScene,
    #[error("object {index}: {reason}")]
    BadObject { index: usize, reason: String },
    #[error("polar: {0}")]
    Polar(#[from] crate::polar::PolarError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Orthographic,
    Perspective,
}

/// Analytic scene geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Geometry {
    Plane { point: [f64; 3], normal: [f64; 3] },
    Sphere { center: [f64; 3], radius: f64 },
}

/// Unpolarized-intensity pattern over the surface, evaluated at the hit
/// point's world x/y.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Albedo {
    Constant { value: f64 },
    Checker { scale: f64, low: f64, high: f64 },
    /// Smooth multi-frequency pattern; useful where photometric alignment
    /// needs gradients.
    Sinusoid { scale: f64, bias: f64, amplitude: f64 },
}

impl Albedo {
    pub fn eval(&self, p: &Vec3) -> f64 {
        match *self {
            Albedo::Constant { value } => value,
            Albedo::Checker { scale, low, high } => {
                let cell = ((p.x / scale).floor() + (p.y / scale).floor()) as i64;
                if cell.rem_euclid(2) == 0 {
                    high
                } else {
                    low
                }
            }
            Albedo::Sinusoid {
                scale,
                bias,
                amplitude,
            } => {
                let sx = p.x / scale;
                let sy = p.y / scale;
                bias + amplitude
                    * (0.5 * (2.3 * sx).sin() * (1.7 * sy).cos()
                        + 0.3 * (5.1 * sx + 1.3 * sy).sin()
                        + 0.2 * (3.7 * sy - 2.9 * sx).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneObject {
    pub geometry: Geometry,
    pub eta: f64,
    pub reflection: ReflectionType,
    pub albedo: Albedo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub camera: CameraModel,
    #[serde(default = "default_projection")]
    pub projection: Projection,
    pub objects: Vec<SceneObject>,
}

fn default_projection() -> Projection {
    Projection::Perspective
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<(), RenderError> {
        self.camera.validate()?;
        if self.objects.is_empty() {
            return Err(RenderError::EmptyScene);
        }
        for (index, obj) in self.objects.iter().enumerate() {
            if obj.eta <= 1.0 {
                return Err(RenderError::BadObject {
                    index,
                    reason: format!("refractive index {} must exceed 1", obj.eta),
                });
            }
            match &obj.geometry {
                Geometry::Plane { normal, .. } => {
                    if Vector3::from(*normal).norm() < 1e-12 {
                        return Err(RenderError::BadObject {
                            index,
                            reason: "plane normal is zero".into(),
                        });
                    }
                }
                Geometry::Sphere { radius, .. } => {
                    if *radius <= 0.0 {
                        return Err(RenderError::BadObject {
                            index,
                            reason: format!("sphere radius {radius} must be positive"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

struct Hit {
    t: f64,
    point: Vec3,
    normal: Vec3,
    object: usize,
}

fn intersect(geometry: &Geometry, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
    match geometry {
        Geometry::Plane { point, normal } => {
            let n = Vector3::from(*normal).normalize();
            let denom = dir.dot(&n);
            if denom.abs() < 1e-12 {
                return None;
            }
            let t = (Vector3::from(*point) - origin).dot(&n) / denom;
            if t <= 1e-9 {
                return None;
            }
            // Surface normal facing the incoming ray.
            let n_facing = if denom < 0.0 { n } else { -n };
            Some((t, n_facing))
        }
        Geometry::Sphere { center, radius } => {
            let c = Vector3::from(*center);
            let oc = origin - c;
            let b = oc.dot(dir);
            let disc = b * b - (oc.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let sqrt_disc = disc.sqrt();
            let t = if -b - sqrt_disc > 1e-9 {
                -b - sqrt_disc
            } else if -b + sqrt_disc > 1e-9 {
                -b + sqrt_disc
            } else {
                return None;
            };
            let p = origin + dir * t;
            Some((t, (p - c).normalize()))
        }
    }
}

/// Everything the renderer knows about the frame, including the analytic
/// per-pixel Stokes quantities it synthesized from.
pub struct RenderOutput {
    pub stack: PolarizerStack,
    pub gt_normals: NormalMap,
    pub view: DirectionMap,
    /// Analytic unpolarized intensity (zero on background).
    pub i_un: FloatMap,
    /// Analytic degree of polarization.
    pub rho: FloatMap,
    /// Analytic angle of polarization.
    pub phi: FloatMap,
    /// Hit depth along the camera axis (positive; zero on background).
    pub depth: FloatMap,
}

/// Render a scene through the polarimetric forward model.
///
/// For every pixel: intersect the ray, take the surface normal and the
/// viewing direction, evaluate the reflection-type DoP at the viewing angle
/// and the perspective AoP, then synthesize the four polarizer images.
/// Background, grazing, and degenerate (normal parallel to view with
/// nonzero DoP) pixels are masked, not fatal.
pub fn render_scene(
    scene: &SyntheticScene,
    projection: Projection,
) -> Result<RenderOutput, RenderError> {
    scene.validate()?;
    let cam = &scene.camera;
    let (w, h) = (cam.width, cam.height);
    let mut gt = NormalMap::invalid(w, h);
    let mut i_un = FloatMap::zeros(w, h);
    let mut rho = FloatMap::zeros(w, h);
    let mut phi = FloatMap::zeros(w, h);
    let mut depth = FloatMap::zeros(w, h);
    let mut dirs = vec![Vector3::new(0.0, 0.0, 1.0); w * h];

    for y in 0..h {
        for x in 0..w {
            let (origin, dir) = match projection {
                Projection::Perspective => {
                    let v = cam.view_direction(x as f64, y as f64);
                    (Vector3::zeros(), -v)
                }
                Projection::Orthographic => (
                    Vector3::new(
                        (x as f64 - cam.cx) / cam.fx,
                        (y as f64 - cam.cy) / cam.fy,
                        0.0,
                    ),
                    Vector3::new(0.0, 0.0, -1.0),
                ),
            };
            let v = -dir;
            dirs[y * w + x] = v;

            let mut best: Option<Hit> = None;
            for (i, obj) in scene.objects.iter().enumerate() {
                if let Some((t, normal)) = intersect(&obj.geometry, &origin, &dir) {
                    if best.as_ref().map_or(true, |b| t < b.t) {
                        best = Some(Hit {
                            t,
                            point: origin + dir * t,
                            normal,
                            object: i,
                        });
                    }
                }
            }
            let Some(hit) = best else { continue };
            let obj = &scene.objects[hit.object];
            let n = hit.normal;
            let cos_v = n.dot(&v);
            if cos_v <= 0.0 {
                continue;
            }
            let theta_v = match viewing_angle(&n, &v) {
                Ok(t) => t,
                Err(_) => continue,
            };
            if theta_v >= GRAZING_CUTOFF {
                continue;
            }
            let Ok(r) = dop(theta_v, obj.eta, obj.reflection) else {
                continue;
            };
            let p = match aop_from_normal_perspective(&n, &v, obj.reflection) {
                Ok(p) => p,
                // At zero viewing angle the incidence plane is undefined but
                // the DoP vanishes, so the AoP is immaterial.
                Err(_) if r < 1e-12 => 0.0,
                Err(_) => continue,
            };
            gt.set(x, y, n);
            i_un.set(x, y, obj.albedo.eval(&hit.point).max(0.0));
            rho.set(x, y, r);
            phi.set(x, y, p);
            depth.set(x, y, -hit.point.z);
        }
    }

    let stack = synthesize(&i_un, &rho, &phi)?;
    Ok(RenderOutput {
        stack,
        gt_normals: gt,
        view: DirectionMap::new(w, h, dirs),
        i_un,
        rho,
        phi,
        depth,
    })
}
