//! Ground-truth preparation from a depth sensor: temporal median denoising,
//! back-projection to a point cloud, PCA normals, depth reprojection into
//! the polarization camera, photometric extrinsic refinement by coordinate
//! descent, and validity post-processing.
//!
//! Everything here runs in the depth frame (`z > 0` along the ray, see
//! [`crate::camera`]); missing depth is encoded as 0.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::CameraModel;
use crate::image::{BoolMap, FloatMap};
use crate::solver::NormalMap;
use crate::Vec3;

/// Neighbor count for PCA normal estimation.
pub const DEFAULT_PCA_NEIGHBORS: usize = 30;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("depth stack is empty")]
    EmptyStack,
    #[error("depth frames disagree in size")]
    FrameMismatch,
    #[error("camera: {0}")]
    Camera(#[from] crate::camera::CameraError),
    #[error("point cloud has {0} points, need more than k = {1}")]
    TooFewPoints(usize, usize),
    #[error("refinement infeasible: only {valid} of {total} pixels overlap")]
    RefinementInfeasible { valid: usize, total: usize },
}

/// A burst of depth frames from a stationary rig.
#[derive(Debug, Clone)]
pub struct DepthFrameStack {
    pub frames: Vec<FloatMap>,
    pub intrinsics: CameraModel,
}

impl DepthFrameStack {
    pub fn new(frames: Vec<FloatMap>, intrinsics: CameraModel) -> Result<Self, PipelineError> {
        if frames.is_empty() {
            return Err(PipelineError::EmptyStack);
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(PipelineError::FrameMismatch);
        }
        intrinsics.validate()?;
        Ok(Self { frames, intrinsics })
    }
}

/// Per-pixel median over frames with positive depth. A pixel stays missing
/// only when it is missing in more than half of the frames; even-count
/// medians take the lower of the two central values, keeping the result
/// deterministic and idempotent.
pub fn median_denoise(stack: &DepthFrameStack) -> Result<FloatMap, PipelineError> {
    let n = stack.frames.len();
    let (w, h) = (stack.frames[0].width(), stack.frames[0].height());
    let mut out = FloatMap::zeros(w, h);
    let mut values = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            values.clear();
            for frame in &stack.frames {
                let d = frame.get(x, y);
                if d > 0.0 {
                    values.push(d);
                }
            }
            let missing = n - values.len();
            if missing * 2 > n {
                continue;
            }
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            out.set(x, y, values[(values.len() - 1) / 2]);
        }
    }
    Ok(out)
}

/// Points back-projected from a depth map, remembering their source pixel.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub pixel_index: Vec<usize>,
    pub width: usize,
    pub height: usize,
}

pub fn depth_to_pointcloud(depth: &FloatMap, intrinsics: &CameraModel) -> PointCloud {
    let (w, h) = (depth.width(), depth.height());
    let mut points = Vec::new();
    let mut pixel_index = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d = depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            points.push(intrinsics.unproject_depth(x as f64, y as f64, d));
            pixel_index.push(y * w + x);
        }
    }
    PointCloud {
        points,
        pixel_index,
        width: w,
        height: h,
    }
}

fn k_nearest(points: &[Vec3], query: usize, k: usize) -> Vec<usize> {
    let q = points[query];
    let mut dists: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p - q).norm_squared(), i))
        .collect();
    let kth = k.min(dists.len() - 1);
    dists.select_nth_unstable_by(kth, |a, b| a.partial_cmp(b).unwrap());
    dists.truncate(kth + 1);
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists.into_iter().map(|(_, i)| i).collect()
}

/// Per-point unit normals from the covariance of the k nearest neighbors.
///
/// The normal is the eigenvector of the smallest eigenvalue, sign-flipped to
/// face the camera (`n . (-p/|p|) > 0`). Rank-deficient neighborhoods
/// (collinear points) yield `None`.
pub fn pca_normals(
    cloud: &PointCloud,
    k: usize,
) -> Result<Vec<Option<Vec3>>, PipelineError> {
    if cloud.points.len() <= k || k < 3 {
        return Err(PipelineError::TooFewPoints(cloud.points.len(), k));
    }
    let normals: Vec<Option<Vec3>> = (0..cloud.points.len())
        .into_par_iter()
        .map(|i| {
            let neighbors = k_nearest(&cloud.points, i, k);
            let mut mean = Vector3::zeros();
            for &j in &neighbors {
                mean += cloud.points[j];
            }
            mean /= neighbors.len() as f64;
            let mut cov = Matrix3::zeros();
            for &j in &neighbors {
                let d = cloud.points[j] - mean;
                cov += d * d.transpose();
            }
            cov /= neighbors.len() as f64;
            let eig = cov.symmetric_eigen();
            // Ascending eigenvalue order.
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let l_min = eig.eigenvalues[order[0]].max(0.0);
            let l_mid = eig.eigenvalues[order[1]].max(0.0);
            let l_max = eig.eigenvalues[order[2]].max(0.0);
            // rank < 2: the two largest eigenvalues do not both carry
            // spatial extent.
            if l_max <= 0.0 || l_mid < 1e-9 * l_max {
                return None;
            }
            let _ = l_min;
            let mut n = eig.eigenvectors.column(order[0]).into_owned();
            let norm = n.norm();
            if norm < 1e-12 {
                return None;
            }
            n /= norm;
            // Face the camera at the origin.
            let to_camera = -cloud.points[i];
            if n.dot(&to_camera) < 0.0 {
                n = -n;
            }
            Some(n)
        })
        .collect();
    Ok(normals)
}

/// Forward-project a depth map into another camera with z-buffering; the
/// nearest surface wins, holes stay missing.
pub fn reproject_depth(
    depth: &FloatMap,
    depth_cam: &CameraModel,
    pol_cam: &CameraModel,
) -> FloatMap {
    let (w, h) = (pol_cam.width, pol_cam.height);
    let mut out = FloatMap::zeros(w, h);
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let p = depth_cam.unproject_depth(x as f64, y as f64, d);
            let q = depth_cam.transform_to_partner(&p);
            let Some((u, r)) = pol_cam.project_depth(&q) else {
                continue;
            };
            let ui = u.round();
            let ri = r.round();
            if ui < 0.0 || ri < 0.0 || ui >= w as f64 || ri >= h as f64 {
                continue;
            }
            let (ui, ri) = (ui as usize, ri as usize);
            let existing = out.get(ui, ri);
            if existing <= 0.0 || q.z < existing {
                out.set(ui, ri, q.z);
            }
        }
    }
    out
}

/// Search brackets for one coordinate-descent pass.
#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    /// Half-width of the rotation line search, radians.
    pub rotation_bracket: f64,
    /// Half-width of the translation line search, meters.
    pub translation_bracket: f64,
    pub max_cycles: usize,
    /// A full cycle improving the objective by less than this stops.
    pub min_improvement: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            rotation_bracket: 2.0_f64.to_radians(),
            translation_bracket: 0.02,
            max_cycles: 50,
            min_improvement: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// Depth camera with refined extrinsics.
    pub refined: CameraModel,
    pub objective: f64,
    /// False when the objective carried no signal (textureless images);
    /// the initial extrinsics are returned unchanged in that case.
    pub confident: bool,
    pub cycles: usize,
}

/// Photometric objective: project every valid depth pixel into the
/// polarization camera, compare the depth camera's gray value against the
/// bilinearly sampled unpolarized intensity; both signals are normalized to
/// zero mean and unit variance over the overlap before taking the mean
/// absolute difference. Returns `None` when the overlap is below 1%.
fn photometric_objective(
    params: &[f64; 6],
    depth_cam: &CameraModel,
    pol_cam: &CameraModel,
    depth: &FloatMap,
    gray: &FloatMap,
    i_un: &FloatMap,
) -> Option<(f64, usize, usize)> {
    let mut cam = depth_cam.clone();
    cam.rotation_axis_angle = [params[0], params[1], params[2]];
    cam.translation = [params[3], params[4], params[5]];
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut total = 0usize;
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            let d = depth.get(x, y);
            if d <= 0.0 {
                continue;
            }
            total += 1;
            let p = cam.unproject_depth(x as f64, y as f64, d);
            let q = cam.transform_to_partner(&p);
            let Some((u, r)) = pol_cam.project_depth(&q) else {
                continue;
            };
            if u < 0.0 || r < 0.0 || u > (pol_cam.width - 1) as f64 || r > (pol_cam.height - 1) as f64
            {
                continue;
            }
            a.push(gray.get(x, y));
            b.push(i_un.sample_bilinear(u, r));
        }
    }
    if total == 0 || a.len() * 100 < total {
        return None;
    }
    let normalize = |v: &mut [f64]| -> bool {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if var < 1e-12 {
            return false;
        }
        let std = var.sqrt();
        for x in v.iter_mut() {
            *x = (*x - mean) / std;
        }
        true
    };
    let textured = normalize(&mut a) && normalize(&mut b);
    if !textured {
        // Flat objective: no photometric signal to align against.
        return Some((f64::INFINITY, a.len(), total));
    }
    let mad = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    Some((mad, a.len(), total))
}

const GOLDEN_RATIO: f64 = 1.618033988749895;

/// Golden-section minimization of `f` on `[lo, hi]` down to interval `tol`.
fn golden_section(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv = 1.0 / GOLDEN_RATIO;
    let mut c = hi - (hi - lo) * inv;
    let mut d = lo + (hi - lo) * inv;
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - (hi - lo) * inv;
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + (hi - lo) * inv;
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Refine the depth-to-polarization extrinsics by cyclic per-coordinate
/// golden-section searches on the photometric objective.
///
/// The objective never increases relative to the input extrinsics: a
/// coordinate move is kept only when it improves.
pub fn refine_extrinsics(
    depth_cam: &CameraModel,
    pol_cam: &CameraModel,
    depth: &FloatMap,
    gray: &FloatMap,
    i_un: &FloatMap,
    opts: &RefineOptions,
) -> Result<RefineResult, PipelineError> {
    depth_cam.validate()?;
    pol_cam.validate()?;
    let mut params = [
        depth_cam.rotation_axis_angle[0],
        depth_cam.rotation_axis_angle[1],
        depth_cam.rotation_axis_angle[2],
        depth_cam.translation[0],
        depth_cam.translation[1],
        depth_cam.translation[2],
    ];
    let eval = |p: &[f64; 6]| photometric_objective(p, depth_cam, pol_cam, depth, gray, i_un);
    let Some((mut best, valid, total)) = eval(&params) else {
        return Err(PipelineError::RefinementInfeasible {
            valid: 0,
            total: depth.data().iter().filter(|&&d| d > 0.0).count(),
        });
    };
    if valid * 100 < total {
        return Err(PipelineError::RefinementInfeasible { valid, total });
    }
    if !best.is_finite() {
        return Ok(RefineResult {
            refined: depth_cam.clone(),
            objective: best,
            confident: false,
            cycles: 0,
        });
    }

    let brackets = [
        opts.rotation_bracket,
        opts.rotation_bracket,
        opts.rotation_bracket,
        opts.translation_bracket,
        opts.translation_bracket,
        opts.translation_bracket,
    ];
    let mut cycles = 0;
    for _ in 0..opts.max_cycles {
        cycles += 1;
        let cycle_start = best;
        for coord in 0..6 {
            let center = params[coord];
            let half = brackets[coord];
            let candidate = golden_section(
                |t| {
                    let mut p = params;
                    p[coord] = t;
                    eval(&p).map(|(obj, _, _)| obj).unwrap_or(f64::INFINITY)
                },
                center - half,
                center + half,
                half * 1e-5,
            );
            let mut p = params;
            p[coord] = candidate;
            if let Some((obj, _, _)) = eval(&p) {
                if obj < best {
                    best = obj;
                    params = p;
                }
            }
        }
        if cycle_start - best < opts.min_improvement {
            break;
        }
    }
    let mut refined = depth_cam.clone();
    refined.rotation_axis_angle = [params[0], params[1], params[2]];
    refined.translation = [params[3], params[4], params[5]];
    Ok(RefineResult {
        refined,
        objective: best,
        confident: true,
        cycles,
    })
}

/// Thresholds for the validity mask.
#[derive(Debug, Clone, Copy)]
pub struct MaskParams {
    /// Depth beyond this is unreliable, meters.
    pub max_range: f64,
    /// A point needs at least this many neighbors within `radius`.
    pub min_neighbors: usize,
    /// Density radius, meters.
    pub radius: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            max_range: 5.0,
            min_neighbors: 10,
            radius: 0.020,
        }
    }
}

/// Exclude pixels with missing or out-of-range depth, sparse local point
/// support (thin structures), or failed PCA.
pub fn postprocess_mask(
    normals: &[Option<Vec3>],
    cloud: &PointCloud,
    depth: &FloatMap,
    params: &MaskParams,
) -> BoolMap {
    assert_eq!(normals.len(), cloud.points.len());
    let mut mask = BoolMap::filled(depth.width(), depth.height(), false);
    let r2 = params.radius * params.radius;
    let flags: Vec<bool> = (0..cloud.points.len())
        .into_par_iter()
        .map(|i| {
            if normals[i].is_none() {
                return false;
            }
            let idx = cloud.pixel_index[i];
            let d = depth.data()[idx];
            if d <= 0.0 || d > params.max_range {
                return false;
            }
            let q = cloud.points[i];
            let mut count = 0usize;
            for (j, p) in cloud.points.iter().enumerate() {
                if j != i && (p - q).norm_squared() <= r2 {
                    count += 1;
                    if count >= params.min_neighbors {
                        return true;
                    }
                }
            }
            false
        })
        .collect();
    for (i, ok) in flags.iter().enumerate() {
        if *ok {
            let idx = cloud.pixel_index[i];
            mask.set(idx % depth.width(), idx / depth.width(), true);
        }
    }
    mask
}

/// Scatter per-point PCA normals back onto the pixel grid as a normal map.
pub fn normals_to_map(normals: &[Option<Vec3>], cloud: &PointCloud, mask: &BoolMap) -> NormalMap {
    let mut nm = NormalMap::invalid(cloud.width, cloud.height);
    for (i, n) in normals.iter().enumerate() {
        if let Some(n) = n {
            let idx = cloud.pixel_index[i];
            let (x, y) = (idx % cloud.width, idx / cloud.width);
            if mask.get(x, y) {
                nm.set(x, y, *n);
            }
        }
    }
    nm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(w: usize, h: usize) -> CameraModel {
        CameraModel::pinhole(
            w as f64,
            w as f64,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        )
    }

    struct SplitMix(u64);
    impl SplitMix {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn median_of_identical_frames_is_that_frame() {
        let frame = FloatMap::from_fn(4, 3, |x, y| 1.0 + x as f64 + 10.0 * y as f64);
        let stack = DepthFrameStack::new(vec![frame.clone(); 5], cam(4, 3)).unwrap();
        let out = median_denoise(&stack).unwrap();
        assert_eq!(out, frame);
    }

    #[test]
    fn median_three_values() {
        let mk = |v: f64| FloatMap::constant(1, 1, v);
        let stack = DepthFrameStack::new(vec![mk(1.0), mk(1.1), mk(9.9)], cam(1, 1)).unwrap();
        assert_eq!(median_denoise(&stack).unwrap().get(0, 0), 1.1);
    }

    #[test]
    fn median_missing_majority_stays_missing() {
        let mk = |v: f64| FloatMap::constant(1, 1, v);
        // 2 of 3 missing: masked.
        let stack = DepthFrameStack::new(vec![mk(0.0), mk(0.0), mk(2.0)], cam(1, 1)).unwrap();
        assert_eq!(median_denoise(&stack).unwrap().get(0, 0), 0.0);
        // 1 of 3 missing: median over the present values.
        let stack = DepthFrameStack::new(vec![mk(0.0), mk(3.0), mk(2.0)], cam(1, 1)).unwrap();
        assert_eq!(median_denoise(&stack).unwrap().get(0, 0), 2.0);
        assert!(DepthFrameStack::new(vec![], cam(1, 1)).is_err());
    }

    #[test]
    fn median_noise_suppression_matches_sampled_oracle() {
        // 50 frames of truth + uniform +-5 cm noise: the output error at
        // each pixel is bounded by the empirical median deviation of the
        // same noise sample.
        let mut rng = SplitMix(123);
        let (w, h) = (8, 6);
        let truth = FloatMap::from_fn(w, h, |x, y| 1.0 + 0.01 * (x + y) as f64);
        let mut frames = Vec::new();
        let mut noise_samples: Vec<Vec<f64>> = vec![Vec::new(); w * h];
        for _ in 0..50 {
            let mut frame = FloatMap::zeros(w, h);
            for y in 0..h {
                for x in 0..w {
                    let eps = (rng.next() - 0.5) * 0.10;
                    noise_samples[y * w + x].push(eps);
                    frame.set(x, y, truth.get(x, y) + eps);
                }
            }
            frames.push(frame);
        }
        let out = median_denoise(&DepthFrameStack::new(frames, cam(w, h)).unwrap()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut sample = noise_samples[y * w + x].clone();
                sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let med_dev = sample[(sample.len() - 1) / 2].abs();
                let err = (out.get(x, y) - truth.get(x, y)).abs();
                assert!(err <= med_dev + 1e-12, "({x},{y}): {err} > {med_dev}");
            }
        }
    }

    #[test]
    fn median_is_idempotent() {
        let mut rng = SplitMix(5);
        let frames: Vec<FloatMap> = (0..7)
            .map(|_| FloatMap::from_fn(5, 4, |_, _| 1.0 + rng.next()))
            .collect();
        let once = median_denoise(&DepthFrameStack::new(frames, cam(5, 4)).unwrap()).unwrap();
        let again = median_denoise(
            &DepthFrameStack::new(vec![once.clone(); 7], cam(5, 4)).unwrap(),
        )
        .unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn pointcloud_principal_point_and_plane() {
        let c = cam(8, 8);
        let depth = FloatMap::constant(8, 8, 1.0);
        let cloud = depth_to_pointcloud(&depth, &c);
        assert_eq!(cloud.points.len(), 64);
        // Pixel at the principal point maps to (0, 0, 1).
        let center = cloud
            .points
            .iter()
            .zip(&cloud.pixel_index)
            .find(|(_, &idx)| idx == 4 * 8 + 4)
            .unwrap()
            .0;
        assert!((center - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        for p in &cloud.points {
            assert_eq!(p.z, 1.0);
        }
    }

    #[test]
    fn pointcloud_of_rendered_plane_satisfies_plane_equation() {
        // Synthetic depth of the plane n . p = c with n = (0.1, -0.2, 1).
        let c = cam(16, 16);
        let n = Vector3::new(0.1, -0.2, 1.0);
        let offset = 2.0;
        let depth = FloatMap::from_fn(16, 16, |x, y| {
            let ray = Vector3::new(
                (x as f64 - c.cx) / c.fx,
                (y as f64 - c.cy) / c.fy,
                1.0,
            );
            offset / n.dot(&ray)
        });
        let cloud = depth_to_pointcloud(&depth, &c);
        for p in &cloud.points {
            assert!((n.dot(p) - offset).abs() < 1e-9);
        }
    }

    #[test]
    fn pca_normals_on_plane_face_camera() {
        let c = cam(16, 16);
        let depth = FloatMap::constant(16, 16, 2.0);
        let cloud = depth_to_pointcloud(&depth, &c);
        let normals = pca_normals(&cloud, 8).unwrap();
        for (i, n) in normals.iter().enumerate() {
            let n = n.expect("planar neighborhoods are well-posed");
            // The plane z=2 has normal +-z; camera-facing means n_z < 0.
            assert!((n.z + 1.0).abs() < 1e-9, "point {i}: {n:?}");
            assert!(n.dot(&(-cloud.points[i].normalize())) > 0.0);
        }
    }

    #[test]
    fn pca_normals_on_sphere_align_with_radial_direction() {
        // Points on a unit sphere centered 2 m down the axis, around 1e4
        // samples, k = 30: normals align with the radial direction within
        // 2 degrees.
        let mut rng = SplitMix(77);
        let center = Vector3::new(0.0, 0.0, 2.0);
        let mut points = Vec::new();
        while points.len() < 10_000 {
            let u = 2.0 * rng.next() - 1.0;
            let v = 2.0 * rng.next() - 1.0;
            let w = 2.0 * rng.next() - 1.0;
            let p = Vector3::new(u, v, w);
            if p.norm() > 1e-3 && p.norm() <= 1.0 {
                let s = p.normalize();
                // Camera-visible cap: visibility from the origin needs
                // s . (center + s) < 0, i.e. s_z < -0.5 here.
                if s.z < -0.5 {
                    points.push(center + s);
                }
            }
        }
        let n_points = points.len();
        let cloud = PointCloud {
            points,
            pixel_index: (0..n_points).collect(),
            width: n_points,
            height: 1,
        };
        let normals = pca_normals(&cloud, DEFAULT_PCA_NEIGHBORS).unwrap();
        let mut worst = 0.0_f64;
        let mut interior = 0usize;
        for (i, n) in normals.iter().enumerate() {
            let n = n.expect("sphere neighborhoods are well-posed");
            let radial = (cloud.points[i] - center).normalize();
            // Points near the sampled rim have one-sided neighborhoods;
            // the accuracy bound applies to the interior.
            if radial.z >= -0.55 {
                continue;
            }
            interior += 1;
            // On the visible cap the outward radial faces the camera, so
            // the flip must keep it.
            assert!(n.dot(&radial) > 0.0, "visible point {i} flipped inward");
            let err = n.dot(&radial).clamp(-1.0, 1.0).acos().to_degrees();
            worst = worst.max(err);
        }
        assert!(interior > 8_000);
        assert!(worst < 2.0, "worst radial deviation {worst} deg");
    }

    #[test]
    fn pca_rejects_collinear_neighborhoods() {
        let points: Vec<Vec3> = (0..40)
            .map(|i| Vector3::new(0.0, 0.0, 1.0 + i as f64 * 0.01))
            .collect();
        let n = points.len();
        let cloud = PointCloud {
            points,
            pixel_index: (0..n).collect(),
            width: n,
            height: 1,
        };
        let normals = pca_normals(&cloud, 5).unwrap();
        assert!(normals.iter().all(|n| n.is_none()));
        assert!(pca_normals(&cloud, 40).is_err());
    }

    #[test]
    fn reproject_identity_is_identity_on_covered_pixels() {
        let c = cam(12, 12);
        let mut rng = SplitMix(9);
        let depth = FloatMap::from_fn(12, 12, |_, _| 1.0 + rng.next());
        let out = reproject_depth(&depth, &c, &c);
        for y in 0..12 {
            for x in 0..12 {
                let v = out.get(x, y);
                if v > 0.0 {
                    assert!((v - depth.get(x, y)).abs() < 1e-12);
                }
            }
        }
        assert!(out.data().iter().filter(|&&v| v > 0.0).count() > 100);
    }

    #[test]
    fn reproject_pure_z_translation_shifts_depth() {
        let mut depth_cam = cam(16, 16);
        depth_cam.translation = [0.0, 0.0, 0.1];
        let pol_cam = cam(16, 16);
        let depth = FloatMap::constant(16, 16, 1.0);
        let out = reproject_depth(&depth, &depth_cam, &pol_cam);
        let mut covered = 0;
        for &v in out.data() {
            if v > 0.0 {
                assert!((v - 1.1).abs() < 1e-12);
                covered += 1;
            }
        }
        assert!(covered > 50);
    }

    #[test]
    fn reproject_inverse_recovers_depth() {
        // Map depths through a rigid transform, then back with the inverse;
        // mutually visible pixels agree within 1e-4 m. Depth accuracy under
        // pixel-center rounding needs a narrow field of view and smooth
        // depth, so the lateral quantization barely moves the z values.
        let size = 48;
        let narrow = |_: ()| {
            CameraModel::pinhole(480.0, 480.0, size as f64 / 2.0, size as f64 / 2.0, size, size)
        };
        let mut depth_cam = narrow(());
        depth_cam.rotation_axis_angle = [0.004, -0.003, 0.006];
        depth_cam.translation = [0.006, -0.004, 0.008];
        let pol_cam = narrow(());
        let rot = depth_cam.rotation();
        let inv_rot = rot.inverse();
        let inv_t = -(inv_rot * depth_cam.translation_vec());
        let mut back_cam = narrow(());
        back_cam.rotation_axis_angle = [
            inv_rot.scaled_axis().x,
            inv_rot.scaled_axis().y,
            inv_rot.scaled_axis().z,
        ];
        back_cam.translation = [inv_t.x, inv_t.y, inv_t.z];

        let depth = FloatMap::from_fn(size, size, |x, y| {
            2.0 + 1e-4 * (x as f64) + 2e-4 * (y as f64)
        });
        let fwd = reproject_depth(&depth, &depth_cam, &pol_cam);
        let back = reproject_depth(&fwd, &back_cam, &pol_cam);
        let mut checked = 0;
        let mut worst = 0.0_f64;
        for y in 0..size {
            for x in 0..size {
                let (orig, rec) = (depth.get(x, y), back.get(x, y));
                if orig > 0.0 && rec > 0.0 {
                    worst = worst.max((rec - orig).abs());
                    checked += 1;
                }
            }
        }
        assert!(checked > 500, "only {checked} pixels round-tripped");
        assert!(worst < 1e-4, "worst depth error {worst}");
    }

    /// Scene shared by the refinement tests: two fronto-parallel textured
    /// planes at well-separated depths (split by the world x sign), with
    /// the polarization image synthesized through the true extrinsics. The
    /// depth contrast provides the parallax that separates rotation from
    /// translation for the coordinate descent.
    fn refine_fixture(
        true_rot: [f64; 3],
        true_trans: [f64; 3],
    ) -> (CameraModel, CameraModel, FloatMap, FloatMap, FloatMap) {
        let size = 64;
        let depth_cam = cam(size, size);
        let pol_cam = cam(size, size);
        let (z_near, z_far) = (1.0, 4.0);
        // Texture frequency matched to each plane's pixel footprint, about
        // half a radian per pixel; coarser would weaken the objective,
        // finer would alias under bilinear resampling.
        let pattern = |x: f64, y: f64, w: f64| {
            2.0 + (1.22 * w * x).sin() * (0.98 * w * y).cos()
                + 0.5 * (2.26 * w * x + 1.42 * w * y).sin()
                + 0.3 * (1.94 * w * y - 1.04 * w * x).cos()
        };
        let albedo = move |p: &Vec3| {
            let w = if p.x <= 0.0 { 12.0 } else { 3.0 };
            pattern(p.x, p.y, w)
        };
        // A ray (in the depth frame) hits the near plane when its world x
        // is negative there, the far plane otherwise; the x <= 0 half-space
        // partitions both cameras consistently.
        let hit_depth_frame = |origin: &Vec3, dir: &Vec3| -> Option<Vec3> {
            for z in [z_near, z_far] {
                let t = (z - origin.z) / dir.z;
                if t <= 0.0 {
                    continue;
                }
                let p = origin + dir * t;
                let on_near = p.x <= 0.0;
                if (z == z_near) == on_near {
                    return Some(p);
                }
            }
            None
        };
        let depth = FloatMap::from_fn(size, size, |x, y| {
            let ray = Vector3::new(
                (x as f64 - depth_cam.cx) / depth_cam.fx,
                (y as f64 - depth_cam.cy) / depth_cam.fy,
                1.0,
            );
            hit_depth_frame(&Vector3::zeros(), &ray).map_or(0.0, |p| p.z)
        });
        let gray = FloatMap::from_fn(size, size, |x, y| {
            let d = depth.get(x, y);
            if d <= 0.0 {
                return 0.0;
            }
            let p = depth_cam.unproject_depth(x as f64, y as f64, d);
            albedo(&p)
        });
        // True transform maps depth points into the polarization frame.
        let mut true_cam = depth_cam.clone();
        true_cam.rotation_axis_angle = true_rot;
        true_cam.translation = true_trans;
        let rot = true_cam.rotation();
        let inv_rot = rot.inverse();
        let inv_t = -(inv_rot * true_cam.translation_vec());
        // The polarization camera sees the same geometry: map its rays into
        // the depth frame, intersect there, sample the albedo.
        let i_un = FloatMap::from_fn(size, size, |x, y| {
            let ray = Vector3::new(
                (x as f64 - pol_cam.cx) / pol_cam.fx,
                (y as f64 - pol_cam.cy) / pol_cam.fy,
                1.0,
            );
            let dir = inv_rot * ray;
            hit_depth_frame(&inv_t, &dir).map_or(0.0, |p| albedo(&p))
        });
        (depth_cam, pol_cam, depth, gray, i_un)
    }

    #[test]
    fn refine_at_ground_truth_stays_put() {
        let true_rot = [0.01, -0.005, 0.02];
        let true_trans = [0.02, 0.01, -0.01];
        let (mut depth_cam, pol_cam, depth, gray, i_un) = refine_fixture(true_rot, true_trans);
        depth_cam.rotation_axis_angle = true_rot;
        depth_cam.translation = true_trans;
        let result = refine_extrinsics(
            &depth_cam,
            &pol_cam,
            &depth,
            &gray,
            &i_un,
            &RefineOptions::default(),
        )
        .unwrap();
        assert!(result.confident);
        for i in 0..3 {
            assert!(
                (result.refined.rotation_axis_angle[i] - true_rot[i]).abs() < 1e-3,
                "rotation coordinate {i} moved"
            );
            assert!((result.refined.translation[i] - true_trans[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn refine_recovers_perturbed_extrinsics() {
        let true_rot = [0.0, 0.0, 0.0];
        let true_trans = [0.03, 0.0, 0.0];
        let (mut depth_cam, pol_cam, depth, gray, i_un) = refine_fixture(true_rot, true_trans);
        // Perturb by 1 degree about y and 5 mm in x.
        depth_cam.rotation_axis_angle = [0.0, 1.0_f64.to_radians(), 0.0];
        depth_cam.translation = [0.035, 0.0, 0.0];
        let result = refine_extrinsics(
            &depth_cam,
            &pol_cam,
            &depth,
            &gray,
            &i_un,
            &RefineOptions::default(),
        )
        .unwrap();
        assert!(result.confident);
        let rot_err = (Vector3::from(result.refined.rotation_axis_angle)
            - Vector3::from(true_rot))
        .norm()
        .to_degrees();
        let trans_err = (Vector3::from(result.refined.translation) - Vector3::from(true_trans))
            .norm();
        assert!(
            rot_err < 0.1,
            "rotation error {rot_err} deg; refined {:?} after {} cycles",
            result.refined.rotation_axis_angle,
            result.cycles
        );
        assert!(
            trans_err < 1e-3,
            "translation error {trans_err} m; refined {:?} after {} cycles",
            result.refined.translation,
            result.cycles
        );
    }

    #[test]
    fn refine_never_increases_objective() {
        let (mut depth_cam, pol_cam, depth, gray, i_un) =
            refine_fixture([0.0, 0.0, 0.0], [0.02, 0.0, 0.0]);
        depth_cam.rotation_axis_angle = [0.005, -0.01, 0.008];
        depth_cam.translation = [0.03, 0.005, -0.004];
        let initial = photometric_objective(
            &[0.005, -0.01, 0.008, 0.03, 0.005, -0.004],
            &depth_cam,
            &pol_cam,
            &depth,
            &gray,
            &i_un,
        )
        .unwrap()
        .0;
        let result = refine_extrinsics(
            &depth_cam,
            &pol_cam,
            &depth,
            &gray,
            &i_un,
            &RefineOptions::default(),
        )
        .unwrap();
        assert!(result.objective <= initial + 1e-12);
    }

    #[test]
    fn refine_textureless_returns_initial_without_confidence() {
        let depth_cam = cam(16, 16);
        let pol_cam = cam(16, 16);
        let depth = FloatMap::constant(16, 16, 2.0);
        let gray = FloatMap::constant(16, 16, 1.0);
        let i_un = FloatMap::constant(16, 16, 0.7);
        let result = refine_extrinsics(
            &depth_cam,
            &pol_cam,
            &depth,
            &gray,
            &i_un,
            &RefineOptions::default(),
        )
        .unwrap();
        assert!(!result.confident);
        assert_eq!(result.refined.translation, depth_cam.translation);
    }

    #[test]
    fn refine_without_overlap_is_infeasible() {
        let mut depth_cam = cam(16, 16);
        // Move the partner far off to the side: nothing projects in-frame.
        depth_cam.translation = [100.0, 0.0, 0.0];
        let pol_cam = cam(16, 16);
        let depth = FloatMap::constant(16, 16, 2.0);
        let gray = FloatMap::constant(16, 16, 1.0);
        let i_un = FloatMap::constant(16, 16, 1.0);
        assert!(matches!(
            refine_extrinsics(
                &depth_cam,
                &pol_cam,
                &depth,
                &gray,
                &i_un,
                &RefineOptions::default()
            ),
            Err(PipelineError::RefinementInfeasible { .. })
        ));
    }

    #[test]
    fn postprocess_masks_missing_out_of_range_and_sparse() {
        let c = cam(16, 16);
        let mut depth = FloatMap::constant(16, 16, 2.0);
        // A missing hole and an out-of-range region.
        depth.set(3, 3, 0.0);
        depth.set(10, 10, 9.0);
        let cloud = depth_to_pointcloud(&depth, &c);
        let normals = pca_normals(&cloud, 8).unwrap();
        let mask = postprocess_mask(&normals, &cloud, &depth, &MaskParams {
            max_range: 5.0,
            min_neighbors: 4,
            radius: 0.5,
        });
        assert!(!mask.get(3, 3));
        assert!(!mask.get(10, 10));
        assert!(mask.get(8, 4));
        // Fully dense in-range plane pixels stay valid away from the holes.
        let valid = mask.count_true();
        assert!(valid > 200, "valid {valid}");
    }

    #[test]
    fn postprocess_masks_thin_wire() {
        // A 1-pixel-wide wire at much closer depth has almost no 3D
        // neighbors within the density radius.
        let c = cam(24, 24);
        let mut depth = FloatMap::constant(24, 24, 2.0);
        for y in 0..24 {
            depth.set(12, y, 0.5);
        }
        let cloud = depth_to_pointcloud(&depth, &c);
        let normals = pca_normals(&cloud, 8).unwrap();
        let mask = postprocess_mask(&normals, &cloud, &depth, &MaskParams {
            max_range: 5.0,
            min_neighbors: 8,
            radius: 0.04,
        });
        for y in 2..22 {
            assert!(!mask.get(12, y), "wire pixel (12,{y}) survived");
        }
    }
}

