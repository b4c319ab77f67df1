//! Closed-form Fresnel relations linking surface normals, viewing geometry,
//! refractive index, and polarization observables.
//!
//! The degree of polarization depends on the viewing angle `theta_v` (between
//! normal and viewing direction), the refractive index, and whether specular
//! or diffuse reflection dominates. The specular curve rises to 1 at the
//! Brewster angle `atan(eta)` and falls back toward grazing, so its inverse
//! has up to two branches; the diffuse curve is strictly increasing, so its
//! inverse is single-valued and has a closed form.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use thiserror::Error;

use crate::Vec3;

/// Viewing angles at or beyond this are treated as invalid: the Fresnel
/// quotients degenerate numerically at grazing incidence.
pub const GRAZING_CUTOFF: f64 = 89.9 * PI / 180.0;

/// Bisection tolerance on the zenith angle.
const BISECT_TOL: f64 = 1e-12;
const BISECT_MAX_ITER: usize = 200;

/// Every angle returned by [`zenith_from_dop`] reproduces the requested
/// degree of polarization at least this tightly.
pub const DOP_ROOT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FresnelError {
    #[error("viewing angle {0} rad is at or beyond the grazing cutoff")]
    Grazing(f64),
    #[error("refractive index must exceed 1, got {0}")]
    BadEta(f64),
    #[error("degree of polarization {0} outside [0, 1]")]
    BadDop(f64),
    #[error("angle {0} outside {1}")]
    BadAngle(f64, &'static str),
    #[error("input vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("incidence plane undefined: normal and viewing direction are parallel")]
    UndefinedIncidencePlane,
    #[error("polarization direction projects to a point on the camera plane")]
    DegenerateProjection,
}

/// Which reflection mode dominates at a surface point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionType {
    Diffuse,
    Specular,
}

/// Zenith/azimuth parameterization of a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceAngles {
    theta: f64,
    alpha: f64,
}

impl SurfaceAngles {
    pub fn new(theta: f64, alpha: f64) -> Result<Self, FresnelError> {
        if !(0.0..FRAC_PI_2).contains(&theta) {
            return Err(FresnelError::BadAngle(theta, "[0, pi/2)"));
        }
        if !(0.0..2.0 * PI).contains(&alpha) {
            return Err(FresnelError::BadAngle(alpha, "[0, 2*pi)"));
        }
        Ok(Self { theta, alpha })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn check_eta(eta: f64) -> Result<(), FresnelError> {
    if eta <= 1.0 || !eta.is_finite() {
        return Err(FresnelError::BadEta(eta));
    }
    Ok(())
}

fn check_theta_v(theta_v: f64) -> Result<(), FresnelError> {
    if !(0.0..GRAZING_CUTOFF).contains(&theta_v) {
        return Err(FresnelError::Grazing(theta_v));
    }
    Ok(())
}

/// Degree of polarization of specular-dominant reflection.
///
/// Equals 1 exactly at the Brewster angle `atan(eta)` and is unimodal on
/// `[0, pi/2)`.
pub fn dop_specular(theta_v: f64, eta: f64) -> Result<f64, FresnelError> {
    check_theta_v(theta_v)?;
    check_eta(eta)?;
    let s2 = theta_v.sin().powi(2);
    let num = 2.0 * s2 * theta_v.cos() * (eta * eta - s2).sqrt();
    let den = eta * eta - s2 - eta * eta * s2 + 2.0 * s2 * s2;
    Ok((num / den).clamp(0.0, 1.0))
}

/// Degree of polarization of diffuse-dominant reflection.
///
/// Strictly increasing in the viewing angle; stays well below 1 for common
/// refractive indices.
pub fn dop_diffuse(theta_v: f64, eta: f64) -> Result<f64, FresnelError> {
    check_theta_v(theta_v)?;
    check_eta(eta)?;
    let s2 = theta_v.sin().powi(2);
    let a = eta - 1.0 / eta;
    let b = eta + 1.0 / eta;
    let num = a * a * s2;
    let den = 2.0 + 2.0 * eta * eta - b * b * s2 + 4.0 * theta_v.cos() * (eta * eta - s2).sqrt();
    Ok((num / den).clamp(0.0, 1.0))
}

/// Degree of polarization for the given reflection type.
pub fn dop(theta_v: f64, eta: f64, reflection: ReflectionType) -> Result<f64, FresnelError> {
    match reflection {
        ReflectionType::Diffuse => dop_diffuse(theta_v, eta),
        ReflectionType::Specular => dop_specular(theta_v, eta),
    }
}

/// Brewster angle `atan(eta)`, where specular reflection is fully polarized.
pub fn brewster_angle(eta: f64) -> f64 {
    eta.atan()
}

/// Closed-form zenith estimate from the degree of polarization.
///
/// This expression inverts the *diffuse* forward curve; it is attributed
/// differently in parts of the literature, so callers validate it against
/// the forward model before trusting it (see [`zenith_from_dop`]).
fn closed_form_zenith(rho: f64, eta: f64) -> Option<f64> {
    let e2 = eta * eta;
    let e3 = e2 * eta;
    let e4 = e2 * e2;
    let r2 = rho * rho;
    let num = e4 * (1.0 - r2) + 2.0 * e2 * (2.0 * r2 + rho - 1.0) + r2 + 2.0 * rho
        - 4.0 * e3 * rho * (1.0 - r2).sqrt()
        + 1.0;
    let den = (rho + 1.0) * (rho + 1.0) * (e4 + 1.0) + 2.0 * e2 * (3.0 * r2 + 2.0 * rho - 1.0);
    let c2 = num / den;
    if !(0.0..=1.0).contains(&c2) {
        return None;
    }
    Some(c2.sqrt().clamp(0.0, 1.0).acos())
}

/// Bisection for `dop(theta) == rho` on `[lo, hi]`, assuming opposite signs
/// of the residual at the endpoints.
fn bisect_dop(
    rho: f64,
    eta: f64,
    reflection: ReflectionType,
    mut lo: f64,
    mut hi: f64,
) -> Option<f64> {
    let f = |t: f64| dop(t, eta, reflection).map(|d| d - rho).unwrap_or(f64::NAN);
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo.abs() <= DOP_ROOT_TOL {
        return Some(lo);
    }
    if fhi.abs() <= DOP_ROOT_TOL {
        return Some(hi);
    }
    if flo * fhi > 0.0 {
        return None;
    }
    for _ in 0..BISECT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || hi - lo < BISECT_TOL {
            return Some(mid);
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Invert the forward DoP model: all viewing angles in `[0, GRAZING_CUTOFF)`
/// whose degree of polarization equals `rho`.
///
/// Diffuse reflection yields at most one root (the closed form when it
/// round-trips, bisection otherwise). Specular reflection yields up to two
/// roots, one on each side of the Brewster angle. A `rho` beyond the
/// achievable maximum yields an empty list. Every returned angle satisfies
/// `|dop(theta) - rho| < DOP_ROOT_TOL`.
pub fn zenith_from_dop(
    rho: f64,
    eta: f64,
    reflection: ReflectionType,
) -> Result<Vec<f64>, FresnelError> {
    check_eta(eta)?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(FresnelError::BadDop(rho));
    }
    if rho == 0.0 {
        // Both curves vanish only at normal incidence within the cutoff.
        return Ok(vec![0.0]);
    }
    let upper = GRAZING_CUTOFF - 1e-9;
    let mut roots = Vec::new();
    match reflection {
        ReflectionType::Diffuse => {
            if let Some(theta) = closed_form_zenith(rho, eta) {
                if theta < GRAZING_CUTOFF {
                    if let Ok(fwd) = dop_diffuse(theta, eta) {
                        if (fwd - rho).abs() < DOP_ROOT_TOL {
                            roots.push(theta);
                        }
                    }
                }
            }
            if roots.is_empty() {
                if let Some(theta) = bisect_dop(rho, eta, reflection, 0.0, upper) {
                    roots.push(theta);
                }
            }
        }
        ReflectionType::Specular => {
            let brewster = brewster_angle(eta);
            if rho >= 1.0 - DOP_ROOT_TOL {
                roots.push(brewster);
            } else {
                if let Some(theta) = bisect_dop(rho, eta, reflection, 0.0, brewster) {
                    roots.push(theta);
                }
                if let Some(theta) = bisect_dop(rho, eta, reflection, brewster, upper) {
                    roots.push(theta);
                }
            }
        }
    }
    roots.retain(|&t| {
        dop(t, eta, reflection)
            .map(|d| (d - rho).abs() < DOP_ROOT_TOL)
            .unwrap_or(false)
    });
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    Ok(roots)
}

/// Unit normal from zenith and azimuth:
/// `(sin t cos a, sin t sin a, cos t)`.
pub fn normal_from_angles(angles: &SurfaceAngles) -> Vec3 {
    let (st, ct) = (angles.theta.sin(), angles.theta.cos());
    let (sa, ca) = (angles.alpha.sin(), angles.alpha.cos());
    Vector3::new(st * ca, st * sa, ct)
}

/// Angle between two unit vectors, `acos` clamped for safety.
pub fn viewing_angle(n: &Vec3, v: &Vec3) -> Result<f64, FresnelError> {
    for vec in [n, v] {
        let norm = vec.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(FresnelError::NotUnit(norm));
        }
    }
    Ok(n.dot(v).clamp(-1.0, 1.0).acos())
}

/// A validated surface-normal / viewing-direction pair for one visible
/// point, with the derived viewing angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewGeometry {
    n: Vec3,
    v: Vec3,
    theta_v: f64,
}

impl ViewGeometry {
    /// Requires unit vectors and a camera-facing normal (`n . v > 0`).
    pub fn new(n: Vec3, v: Vec3) -> Result<Self, FresnelError> {
        let theta_v = viewing_angle(&n, &v)?;
        if n.dot(&v) <= 0.0 {
            return Err(FresnelError::BadAngle(theta_v, "visible range [0, pi/2)"));
        }
        Ok(Self { n, v, theta_v })
    }

    pub fn normal(&self) -> Vec3 {
        self.n
    }

    pub fn view(&self) -> Vec3 {
        self.v
    }

    pub fn theta_v(&self) -> f64 {
        self.theta_v
    }

    /// Degree of polarization this geometry produces for a reflection type.
    pub fn dop(&self, eta: f64, reflection: ReflectionType) -> Result<f64, FresnelError> {
        dop(self.theta_v, eta, reflection)
    }

    /// Angle of polarization this geometry projects onto the camera plane.
    pub fn aop(&self, reflection: ReflectionType) -> Result<f64, FresnelError> {
        aop_from_normal_perspective(&self.n, &self.v, reflection)
    }
}

/// One orthographic azimuth hypothesis and the reflection type it assumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthCandidate {
    pub alpha: f64,
    pub reflection: ReflectionType,
}

fn wrap_two_pi(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r < 0.0 {
        r += 2.0 * PI;
    }
    r
}

pub fn wrap_pi(a: f64) -> f64 {
    let mut r = a % PI;
    if r < 0.0 {
        r += PI;
    }
    r
}

/// The four azimuth hypotheses for a measured angle of polarization under
/// orthographic viewing: `{phi, phi+pi}` if diffuse reflection dominates,
/// `{phi+pi/2, phi-pi/2}` if specular does. All wrapped to `[0, 2*pi)`.
pub fn azimuth_candidates_ortho(phi: f64) -> [AzimuthCandidate; 4] {
    [
        AzimuthCandidate {
            alpha: wrap_two_pi(phi),
            reflection: ReflectionType::Diffuse,
        },
        AzimuthCandidate {
            alpha: wrap_two_pi(phi + PI),
            reflection: ReflectionType::Diffuse,
        },
        AzimuthCandidate {
            alpha: wrap_two_pi(phi + FRAC_PI_2),
            reflection: ReflectionType::Specular,
        },
        AzimuthCandidate {
            alpha: wrap_two_pi(phi - FRAC_PI_2),
            reflection: ReflectionType::Specular,
        },
    ]
}

/// Angle of polarization predicted for a surface normal under perspective
/// viewing, in `[0, pi)`.
///
/// The incidence-plane normal is `n_i = n x v`. The polarization direction
/// is `d = n_i` for specular-dominant reflection (perpendicular to the
/// incidence plane) and `d = n_i x v` for diffuse-dominant reflection
/// (parallel to it). Projecting onto the camera plane with normal
/// `n_c = (0,0,1)` gives `Phi = (d x v) x n_c`, whose z-component vanishes
/// by construction; the angle is `atan2(Phi_y, Phi_x)` mod pi.
pub fn aop_from_normal_perspective(
    n: &Vec3,
    v: &Vec3,
    reflection: ReflectionType,
) -> Result<f64, FresnelError> {
    let n_i = n.cross(v);
    if n_i.norm() < 1e-9 {
        return Err(FresnelError::UndefinedIncidencePlane);
    }
    let d = match reflection {
        ReflectionType::Specular => n_i,
        ReflectionType::Diffuse => n_i.cross(v),
    };
    let n_c = Vector3::new(0.0, 0.0, 1.0);
    let phi_vec = d.cross(v).cross(&n_c);
    debug_assert!(phi_vec.z.abs() < 1e-12);
    if phi_vec.x.hypot(phi_vec.y) < 1e-12 {
        return Err(FresnelError::DegenerateProjection);
    }
    Ok(wrap_pi(phi_vec.y.atan2(phi_vec.x)))
}

/// Absolute angular distance between two polarization angles, respecting the
/// pi-periodicity. Result in `[0, pi/2]`.
pub fn aop_distance(a: f64, b: f64) -> f64 {
    let d = wrap_pi(a - b);
    d.min(PI - d)
}
