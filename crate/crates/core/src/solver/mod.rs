//! Physics-based per-pixel normal estimation: candidate generation from
//! Stokes measurements, disambiguation, and the end-to-end solve, plus a
//! synthetic polarimetric renderer used as the ground-truth oracle.

mod render;

pub use render::{
    render_scene, Albedo, Geometry, Projection, RenderError, RenderOutput, SceneObject,
    SyntheticScene,
};

use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::fresnel::{
    aop_distance, aop_from_normal_perspective, azimuth_candidates_ortho, normal_from_angles,
    zenith_from_dop, FresnelError, ReflectionType, SurfaceAngles, ViewGeometry,
};
use crate::image::BoolMap;
use crate::polar::{decompose, OrthoCandidateSource, PolarizerStack, StokesMaps};
use crate::Vec3;

/// Forward-model agreement required of every emitted candidate, in both the
/// degree of polarization and the angle of polarization (radians).
pub const CANDIDATE_TOL: f64 = 1e-6;

/// Number of uniform cone samples bracketing the perspective AoP roots.
const CONE_SAMPLES: usize = 720;

/// ICM sweeps used by smoothness disambiguation.
pub const ICM_SWEEPS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("maps disagree in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("fresnel: {0}")]
    Fresnel(#[from] FresnelError),
    #[error("no valid pixels to solve")]
    Empty,
    #[error("render: {0}")]
    Render(#[from] RenderError),
}

/// Per-pixel unit 3-vector field with a validity mask.
#[derive(Debug, Clone)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<Vec3>,
    valid: BoolMap,
}

impl NormalMap {
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            normals: vec![Vector3::zeros(); width * height],
            valid: BoolMap::filled(width, height, false),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn normal(&self, x: usize, y: usize) -> Vec3 {
        self.normals[y * self.width + x]
    }

    /// Store a normal and mark the pixel valid.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, n: Vec3) {
        self.normals[y * self.width + x] = n;
        self.valid.set(x, y, true);
    }

    pub fn valid(&self) -> &BoolMap {
        &self.valid
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }
}

/// Per-pixel viewing directions (surface to camera), all unit length.
#[derive(Debug, Clone)]
pub struct DirectionMap {
    width: usize,
    height: usize,
    dirs: Vec<Vec3>,
}

impl DirectionMap {
    pub fn new(width: usize, height: usize, dirs: Vec<Vec3>) -> Self {
        assert_eq!(dirs.len(), width * height);
        Self {
            width,
            height,
            dirs,
        }
    }

    /// Constant map for the orthographic case, `v = (0, 0, 1)` everywhere.
    pub fn orthographic(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![Vector3::new(0.0, 0.0, 1.0); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vec3 {
        self.dirs[y * self.width + x]
    }
}

/// One normal hypothesis and the reflection type it assumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub normal: Vec3,
    pub reflection: ReflectionType,
}

/// Per-pixel candidate lists; empty lists mark unsolvable pixels. Each
/// reflection type contributes at most four candidates per pixel.
#[derive(Debug, Clone)]
pub struct CandidateField {
    width: usize,
    height: usize,
    lists: Vec<Vec<Candidate>>,
}

impl CandidateField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[Candidate] {
        &self.lists[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Orthographic,
    Perspective,
}

/// How candidate ambiguity is resolved.
pub enum Strategy<'a> {
    /// Pick the candidate closest to ground truth (physics upper bound).
    Oracle(&'a NormalMap),
    /// Greedy iterated-conditional-modes smoothing over 4-neighborhoods.
    Smoothness,
}

fn wrap_two_pi(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r < 0.0 {
        r += 2.0 * PI;
    }
    r
}

/// Signed AoP residual in `(-pi/2, pi/2]`.
fn aop_residual(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % PI;
    if d > PI / 2.0 {
        d -= PI;
    } else if d <= -PI / 2.0 {
        d += PI;
    }
    d
}

fn candidate_verifies(
    cand: &Vec3,
    v: &Vec3,
    rho: f64,
    phi: f64,
    eta: f64,
    reflection: ReflectionType,
) -> bool {
    let Ok(geom) = ViewGeometry::new(*cand, *v) else {
        return false;
    };
    if rho < CANDIDATE_TOL && geom.theta_v() < 1e-4 {
        // Zero polarization: any AoP is consistent.
        return true;
    }
    let Ok(fwd_rho) = geom.dop(eta, reflection) else {
        return false;
    };
    if (fwd_rho - rho).abs() >= CANDIDATE_TOL {
        return false;
    }
    match geom.aop(reflection) {
        Ok(fwd_phi) => aop_distance(fwd_phi, phi) < CANDIDATE_TOL,
        Err(_) => false,
    }
}

fn push_unique(list: &mut Vec<Candidate>, cand: Candidate) {
    let dup = list.iter().any(|c| {
        c.reflection == cand.reflection && c.normal.dot(&cand.normal).clamp(-1.0, 1.0).acos() < 1e-7
    });
    if !dup {
        list.push(cand);
    }
}

/// Orthographic candidates: zenith from the DoP inversion, azimuth from the
/// four-way AoP ambiguity, combined through the angle parameterization.
fn candidates_ortho_pixel(rho: f64, phi: f64, eta: f64) -> Vec<Candidate> {
    let mut out = Vec::new();
    let azimuths = azimuth_candidates_ortho(phi);
    for reflection in [ReflectionType::Diffuse, ReflectionType::Specular] {
        let Ok(roots) = zenith_from_dop(rho, eta, reflection) else {
            continue;
        };
        for &theta in &roots {
            for az in azimuths.iter().filter(|a| a.reflection == reflection) {
                let Ok(angles) = SurfaceAngles::new(theta, wrap_two_pi(az.alpha)) else {
                    continue;
                };
                let n = normal_from_angles(&angles);
                if candidate_verifies(&n, &Vector3::new(0.0, 0.0, 1.0), rho, phi, eta, reflection)
                {
                    push_unique(&mut out, Candidate {
                        normal: n,
                        reflection,
                    });
                }
            }
        }
    }
    out
}

/// Perspective candidates: for each zenith root, normals live on a cone of
/// that opening angle about the viewing direction; the AoP residual along
/// the cone is bracketed at uniform samples and refined by bisection.
fn candidates_perspective_pixel(rho: f64, phi: f64, eta: f64, v: &Vec3) -> Vec<Candidate> {
    let mut out = Vec::new();
    // Deterministic cone basis.
    let pick = if v.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let e1 = v.cross(&pick).normalize();
    let e2 = v.cross(&e1);
    for reflection in [ReflectionType::Diffuse, ReflectionType::Specular] {
        let Ok(roots) = zenith_from_dop(rho, eta, reflection) else {
            continue;
        };
        for &theta_v in &roots {
            if theta_v < 1e-9 {
                continue; // handled by the rho ~ 0 fast path
            }
            let cone = |psi: f64| -> Vec3 {
                theta_v.cos() * v + theta_v.sin() * (psi.cos() * e1 + psi.sin() * e2)
            };
            let residual = |psi: f64| -> Option<f64> {
                aop_from_normal_perspective(&cone(psi), v, reflection)
                    .ok()
                    .map(|fwd| aop_residual(fwd, phi))
            };
            let step = 2.0 * PI / CONE_SAMPLES as f64;
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..=CONE_SAMPLES {
                let psi = i as f64 * step;
                let Some(g) = residual(psi) else {
                    prev = None;
                    continue;
                };
                if let Some((psi0, g0)) = prev {
                    // A wrap of the pi-periodic residual also flips the
                    // sign; only brackets without the jump hold a root.
                    if g0 * g <= 0.0 && (g0 - g).abs() < PI / 2.0 {
                        let (mut lo, mut hi, mut glo) = (psi0, psi, g0);
                        for _ in 0..60 {
                            let mid = 0.5 * (lo + hi);
                            match residual(mid) {
                                Some(gm) => {
                                    if glo * gm <= 0.0 {
                                        hi = mid;
                                    } else {
                                        lo = mid;
                                        glo = gm;
                                    }
                                }
                                None => break,
                            }
                        }
                        let n = cone(0.5 * (lo + hi));
                        if candidate_verifies(&n, v, rho, phi, eta, reflection) {
                            push_unique(&mut out, Candidate {
                                normal: n,
                                reflection,
                            });
                        }
                    }
                }
                prev = Some((psi, g));
            }
        }
    }
    out
}

/// Generate per-pixel candidate normals from Stokes measurements.
///
/// Pixels with `rho` below the mask floor but positive intensity carry no
/// orientation information beyond the viewing direction itself and yield the
/// single candidate `n = v`. Pixels whose root set is empty become invalid.
pub fn candidate_normals(
    stokes: &StokesMaps,
    view: &DirectionMap,
    eta: f64,
    mode: SolveMode,
) -> Result<CandidateField, SolverError> {
    if stokes.width() != view.width() || stokes.height() != view.height() {
        return Err(SolverError::DimensionMismatch(
            stokes.width(),
            stokes.height(),
            view.width(),
            view.height(),
        ));
    }
    let (w, h) = (stokes.width(), stokes.height());
    let lists: Vec<Vec<Candidate>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx % w, idx / w);
            let i_un = stokes.i_un.get(x, y);
            let rho = stokes.rho.get(x, y);
            let measurable = stokes.valid.get(x, y) || (i_un > 0.0 && rho < 1.0);
            if !measurable {
                return Vec::new();
            }
            let v = view.get(x, y);
            if rho < crate::polar::DEFAULT_RHO_MIN {
                // Unpolarized pixel: zero viewing angle is the only
                // hypothesis consistent with rho = 0.
                return vec![Candidate {
                    normal: v,
                    reflection: ReflectionType::Diffuse,
                }];
            }
            let phi = stokes.phi.get(x, y);
            match mode {
                SolveMode::Orthographic => candidates_ortho_pixel(rho, phi, eta),
                SolveMode::Perspective => candidates_perspective_pixel(rho, phi, eta, &v),
            }
        })
        .collect();
    Ok(CandidateField {
        width: w,
        height: h,
        lists,
    })
}

fn angular_distance(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Resolve per-pixel ambiguity. Oracle picks the candidate nearest ground
/// truth; smoothness starts from the most camera-facing candidate and runs
/// `ICM_SWEEPS` deterministic raster sweeps minimizing the summed angular
/// distance to 4-neighbors.
pub fn disambiguate(
    candidates: &CandidateField,
    view: &DirectionMap,
    strategy: Strategy<'_>,
) -> Result<NormalMap, SolverError> {
    let (w, h) = (candidates.width, candidates.height);
    let mut out = NormalMap::invalid(w, h);
    match strategy {
        Strategy::Oracle(gt) => {
            if gt.width() != w || gt.height() != h {
                return Err(SolverError::DimensionMismatch(
                    w,
                    h,
                    gt.width(),
                    gt.height(),
                ));
            }
            for y in 0..h {
                for x in 0..w {
                    let list = candidates.at(x, y);
                    if list.is_empty() || !gt.valid().get(x, y) {
                        continue;
                    }
                    let target = gt.normal(x, y);
                    let best = list
                        .iter()
                        .max_by(|a, b| {
                            a.normal
                                .dot(&target)
                                .partial_cmp(&b.normal.dot(&target))
                                .unwrap()
                        })
                        .unwrap();
                    out.set(x, y, best.normal);
                }
            }
        }
        Strategy::Smoothness => {
            // Initialization carries the decisions pure smoothness cannot
            // make: the flatter specular interpretation of any measurement
            // is always at least as smooth as the diffuse one, and the
            // azimuth-flipped twin of a smooth field is equally smooth. So
            // the init prefers diffuse candidates, picks the most
            // camera-facing of them, and breaks the exact flip tie with an
            // outward (convex) prior before ICM refines locally.
            let mut choice = vec![usize::MAX; w * h];
            for y in 0..h {
                for x in 0..w {
                    let list = candidates.at(x, y);
                    if list.is_empty() {
                        continue;
                    }
                    let v = view.get(x, y);
                    let any_diffuse = list
                        .iter()
                        .any(|c| c.reflection == ReflectionType::Diffuse);
                    let mut best = usize::MAX;
                    let mut best_dot = f64::NEG_INFINITY;
                    let mut best_out = f64::NEG_INFINITY;
                    for (i, c) in list.iter().enumerate() {
                        if any_diffuse && c.reflection != ReflectionType::Diffuse {
                            continue;
                        }
                        let d = c.normal.dot(&v);
                        // Outwardness: how far the normal tilts away from
                        // the camera axis, signed along the pixel ray's
                        // lateral direction.
                        let lateral = Vector3::new(-v.x, -v.y, 0.0);
                        let out = c.normal.dot(&lateral);
                        if d > best_dot + 1e-12
                            || ((d - best_dot).abs() <= 1e-12 && out > best_out + 1e-15)
                        {
                            best_dot = d;
                            best_out = out;
                            best = i;
                        }
                    }
                    if best == usize::MAX {
                        best = 0;
                    }
                    choice[y * w + x] = best;
                }
            }
            for _ in 0..ICM_SWEEPS {
                for y in 0..h {
                    for x in 0..w {
                        let list = candidates.at(x, y);
                        if list.is_empty() {
                            continue;
                        }
                        let mut neighbors: Vec<Vec3> = Vec::with_capacity(4);
                        let mut push = |nx: isize, ny: isize| {
                            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                                return;
                            }
                            let idx = ny as usize * w + nx as usize;
                            if choice[idx] != usize::MAX {
                                neighbors
                                    .push(candidates.at(nx as usize, ny as usize)[choice[idx]].normal);
                            }
                        };
                        push(x as isize - 1, y as isize);
                        push(x as isize + 1, y as isize);
                        push(x as isize, y as isize - 1);
                        push(x as isize, y as isize + 1);
                        if neighbors.is_empty() {
                            continue;
                        }
                        let mut best = choice[y * w + x];
                        let mut best_cost = f64::INFINITY;
                        for (i, c) in list.iter().enumerate() {
                            let cost: f64 = neighbors
                                .iter()
                                .map(|nb| angular_distance(&c.normal, nb))
                                .sum();
                            if cost < best_cost {
                                best_cost = cost;
                                best = i;
                            }
                        }
                        choice[y * w + x] = best;
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let idx = y * w + x;
                    if choice[idx] != usize::MAX {
                        out.set(x, y, candidates.at(x, y)[choice[idx]].normal);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Full physics pipeline: decompose the stack, generate candidates, and
/// disambiguate. Degenerate pixels propagate as invalid mask entries.
pub fn solve(
    stack: &PolarizerStack,
    view: &DirectionMap,
    eta: f64,
    mode: SolveMode,
    strategy: Strategy<'_>,
    rho_min: f64,
) -> Result<NormalMap, SolverError> {
    let stokes = decompose(stack, rho_min);
    let cands = candidate_normals(&stokes, view, eta, mode)?;
    disambiguate(&cands, view, strategy)
}

/// Deterministic four-way orthographic candidate packing used by the
/// `candidates` input representation: diffuse zenith with the two diffuse
/// azimuths, then the below-Brewster specular zenith with the two specular
/// azimuths. Missing roots leave `None` slots.
pub struct OrthoCandidates {
    pub eta: f64,
}

impl OrthoCandidateSource for OrthoCandidates {
    fn candidates(&self, rho: f64, phi: f64) -> [Option<Vec3>; 4] {
        let mut out = [None, None, None, None];
        let azimuths = azimuth_candidates_ortho(phi);
        if let Ok(roots) = zenith_from_dop(rho, self.eta, ReflectionType::Diffuse) {
            if let Some(&theta) = roots.first() {
                for (slot, az) in azimuths[0..2].iter().enumerate() {
                    if let Ok(angles) = SurfaceAngles::new(theta, az.alpha) {
                        out[slot] = Some(normal_from_angles(&angles));
                    }
                }
            }
        }
        if let Ok(roots) = zenith_from_dop(rho, self.eta, ReflectionType::Specular) {
            if let Some(&theta) = roots.first() {
                for (slot, az) in azimuths[2..4].iter().enumerate() {
                    if let Ok(angles) = SurfaceAngles::new(theta, az.alpha) {
                        out[2 + slot] = Some(normal_from_angles(&angles));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
