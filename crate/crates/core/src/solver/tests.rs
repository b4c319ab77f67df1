use super::*;
use crate::camera::CameraModel;
use crate::fresnel::{dop_diffuse, wrap_pi};
use crate::metrics;
use crate::polar::DEFAULT_RHO_MIN;

fn tilted_plane_scene(w: usize, h: usize, normal: [f64; 3], reflection: ReflectionType) -> SyntheticScene {
    SyntheticScene {
        camera: CameraModel::pinhole(w as f64, h as f64, w as f64 / 2.0, h as f64 / 2.0, w, h),
        projection: Projection::Orthographic,
        objects: vec![SceneObject {
            geometry: Geometry::Plane {
                point: [0.0, 0.0, -2.0],
                normal,
            },
            eta: 1.5,
            reflection,
            albedo: Albedo::Constant { value: 1.0 },
        }],
    }
}

fn sphere_scene(size: usize, reflection: ReflectionType) -> SyntheticScene {
    SyntheticScene {
        camera: CameraModel::pinhole(
            size as f64 * 1.1,
            size as f64 * 1.1,
            size as f64 / 2.0,
            size as f64 / 2.0,
            size,
            size,
        ),
        projection: Projection::Perspective,
        objects: vec![SceneObject {
            geometry: Geometry::Sphere {
                center: [0.0, 0.0, -3.0],
                radius: 1.0,
            },
            eta: 1.5,
            reflection,
            albedo: Albedo::Constant { value: 1.0 },
        }],
    }
}

#[test]
fn render_fronto_parallel_plane_has_zero_dop() {
    let scene = tilted_plane_scene(16, 16, [0.0, 0.0, 1.0], ReflectionType::Diffuse);
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    for y in 0..16 {
        for x in 0..16 {
            assert!(out.gt_normals.valid().get(x, y));
            assert_eq!(out.rho.get(x, y), 0.0);
            for img in out.stack.images() {
                assert!((img.get(x, y) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn render_ortho_sphere_rho_matches_analytic_geometry() {
    // Independent oracle: under orthographic viewing, a sphere of radius R
    // has sin(theta_v) = r/R at in-disk distance r from the silhouette
    // center, so rho = dop(asin(r/R)).
    let size = 64;
    let scene = SyntheticScene {
        camera: CameraModel::pinhole(28.0, 28.0, 32.0, 32.0, size, size),
        projection: Projection::Orthographic,
        objects: vec![SceneObject {
            geometry: Geometry::Sphere {
                center: [0.0, 0.0, -3.0],
                radius: 1.0,
            },
            eta: 1.5,
            reflection: ReflectionType::Diffuse,
            albedo: Albedo::Constant { value: 1.0 },
        }],
    };
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    let mut max_rho = 0.0_f64;
    let mut max_theta = 0.0_f64;
    for y in 0..size {
        for x in 0..size {
            if !out.gt_normals.valid().get(x, y) {
                continue;
            }
            let rx = (x as f64 - 32.0) / 28.0;
            let ry = (y as f64 - 32.0) / 28.0;
            let sin_t = (rx.hypot(ry)).min(1.0);
            let theta = sin_t.asin();
            if theta >= crate::fresnel::GRAZING_CUTOFF {
                continue;
            }
            let expect = dop_diffuse(theta, 1.5).unwrap();
            assert!(
                (out.rho.get(x, y) - expect).abs() < 1e-9,
                "({x},{y}): {} vs {expect}",
                out.rho.get(x, y)
            );
            max_rho = max_rho.max(out.rho.get(x, y));
            max_theta = max_theta.max(theta);
        }
    }
    // The rim approaches the DoP at the maximum visible viewing angle.
    assert!((max_rho - dop_diffuse(max_theta, 1.5).unwrap()).abs() < 1e-9);
    assert!(max_theta > 1.2, "rim should be steep, got {max_theta}");
}

#[test]
fn render_then_decompose_reproduces_analytic_fields() {
    for scene in [
        tilted_plane_scene(32, 32, [0.3, -0.2, 1.0], ReflectionType::Diffuse),
        sphere_scene(48, ReflectionType::Specular),
    ] {
        let projection = scene.projection;
        let out = render_scene(&scene, projection).unwrap();
        let stokes = decompose(&out.stack, DEFAULT_RHO_MIN);
        let mut checked = 0;
        for y in 0..out.stack.height() {
            for x in 0..out.stack.width() {
                if !out.gt_normals.valid().get(x, y) || out.rho.get(x, y) < DEFAULT_RHO_MIN {
                    continue;
                }
                assert!(stokes.valid.get(x, y));
                assert!((stokes.i_un.get(x, y) - out.i_un.get(x, y)).abs() < 1e-9);
                assert!((stokes.rho.get(x, y) - out.rho.get(x, y)).abs() < 1e-6);
                let dphi = wrap_pi(stokes.phi.get(x, y) - out.phi.get(x, y));
                assert!(dphi.min(std::f64::consts::PI - dphi) < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 100, "too few valid pixels: {checked}");
    }
}

#[test]
fn render_masks_background() {
    let out = render_scene(&sphere_scene(32, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    assert!(!out.gt_normals.valid().get(0, 0));
    assert_eq!(out.i_un.get(0, 0), 0.0);
    let valid = out.gt_normals.valid().count_true();
    assert!(valid > 200, "sphere should cover pixels, got {valid}");
}

fn candidate_check(
    out: &RenderOutput,
    mode: SolveMode,
    eta: f64,
) -> (f64, usize, usize) {
    let stokes = decompose(&out.stack, DEFAULT_RHO_MIN);
    let cands = candidate_normals(&stokes, &out.view, eta, mode).unwrap();
    let mut worst_best = 0.0_f64;
    let mut n_checked = 0usize;
    let mut n_missed = 0usize;
    for y in 0..cands.height() {
        for x in 0..cands.width() {
            if !out.gt_normals.valid().get(x, y) || stokes.rho.get(x, y) < DEFAULT_RHO_MIN {
                continue;
            }
            let list = cands.at(x, y);
            assert!(!list.is_empty(), "no candidates at ({x},{y})");
            // Soundness: every candidate reproduces the measurement.
            let v = out.view.get(x, y);
            for c in list {
                let geom = ViewGeometry::new(c.normal, v).unwrap();
                let fwd_rho = geom.dop(eta, c.reflection).unwrap();
                assert!(
                    (fwd_rho - stokes.rho.get(x, y)).abs() < CANDIDATE_TOL,
                    "unsound DoP at ({x},{y})"
                );
                let fwd_phi = geom.aop(c.reflection).unwrap();
                assert!(
                    aop_distance(fwd_phi, stokes.phi.get(x, y)) < CANDIDATE_TOL,
                    "unsound AoP at ({x},{y})"
                );
                // At most four candidates per reflection type.
            }
            for reflection in [ReflectionType::Diffuse, ReflectionType::Specular] {
                assert!(list.iter().filter(|c| c.reflection == reflection).count() <= 4);
            }
            // Completeness: the true normal is close to some candidate.
            let truth = out.gt_normals.normal(x, y);
            let best = list
                .iter()
                .map(|c| c.normal.dot(&truth).clamp(-1.0, 1.0).acos())
                .fold(f64::INFINITY, f64::min);
            n_checked += 1;
            if best > 1e-4 {
                n_missed += 1;
            } else {
                worst_best = worst_best.max(best);
            }
        }
    }
    (worst_best, n_checked, n_missed)
}

#[test]
fn candidates_complete_on_ortho_plane() {
    let scene = tilted_plane_scene(24, 24, [0.35, -0.15, 1.0], ReflectionType::Diffuse);
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    let (_, checked, missed) = candidate_check(&out, SolveMode::Orthographic, 1.5);
    assert!(checked > 400);
    assert_eq!(missed, 0);
}

#[test]
fn candidates_complete_on_perspective_sphere() {
    let out = render_scene(&sphere_scene(48, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let (_, checked, missed) = candidate_check(&out, SolveMode::Perspective, 1.5);
    assert!(checked > 800, "checked {checked}");
    assert!(
        (missed as f64) < 0.001 * checked as f64,
        "{missed} of {checked} pixels missing the truth"
    );
}

#[test]
fn candidates_complete_on_perspective_specular_plane() {
    let mut scene = tilted_plane_scene(24, 24, [0.3, 0.1, 1.0], ReflectionType::Specular);
    scene.projection = Projection::Perspective;
    let out = render_scene(&scene, Projection::Perspective).unwrap();
    let (_, checked, missed) = candidate_check(&out, SolveMode::Perspective, 1.5);
    assert!(checked > 400);
    assert_eq!(missed, 0);
}

#[test]
fn zero_dop_pixel_gives_single_view_candidate() {
    let scene = tilted_plane_scene(8, 8, [0.0, 0.0, 1.0], ReflectionType::Diffuse);
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    let stokes = decompose(&out.stack, DEFAULT_RHO_MIN);
    let cands = candidate_normals(&stokes, &out.view, 1.5, SolveMode::Orthographic).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            let list = cands.at(x, y);
            assert_eq!(list.len(), 1);
            assert!((list[0].normal - out.view.get(x, y)).norm() < 1e-12);
        }
    }
}

#[test]
fn disambiguate_passes_single_candidates_through() {
    let scene = tilted_plane_scene(8, 8, [0.0, 0.0, 1.0], ReflectionType::Diffuse);
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    let stokes = decompose(&out.stack, DEFAULT_RHO_MIN);
    let cands = candidate_normals(&stokes, &out.view, 1.5, SolveMode::Orthographic).unwrap();
    let nm = disambiguate(&cands, &out.view, Strategy::Smoothness).unwrap();
    for y in 0..8 {
        for x in 0..8 {
            assert!(nm.valid().get(x, y));
            assert!((nm.normal(x, y) - out.view.get(x, y)).norm() < 1e-12);
        }
    }
}

#[test]
fn oracle_strategy_on_sphere_is_tight() {
    let out = render_scene(&sphere_scene(64, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let nm = solve(
        &out.stack,
        &out.view,
        1.5,
        SolveMode::Perspective,
        Strategy::Oracle(&out.gt_normals),
        DEFAULT_RHO_MIN,
    )
    .unwrap();
    let (errors, mask) = metrics::angular_error_map(&nm, &out.gt_normals).unwrap();
    let report = metrics::summarize(&errors, &mask).unwrap();
    assert!(report.mean < 0.5, "oracle mean {}", report.mean);
}

#[test]
fn smoothness_on_diffuse_plane_recovers_normal_up_to_global_flip() {
    let normal = nalgebra::Vector3::new(0.4, -0.25, 1.0).normalize();
    let scene = tilted_plane_scene(24, 24, [normal.x, normal.y, normal.z], ReflectionType::Diffuse);
    let out = render_scene(&scene, Projection::Orthographic).unwrap();
    let nm = solve(
        &out.stack,
        &out.view,
        1.5,
        SolveMode::Orthographic,
        Strategy::Smoothness,
        DEFAULT_RHO_MIN,
    )
    .unwrap();
    // All pixels must agree with the plane normal or, globally, with its
    // azimuth-flipped twin.
    let flipped = nalgebra::Vector3::new(-normal.x, -normal.y, normal.z);
    let first = nm.normal(0, 0);
    let target = if first.dot(&normal) > first.dot(&flipped) {
        normal
    } else {
        flipped
    };
    for y in 0..24 {
        for x in 0..24 {
            assert!(nm.valid().get(x, y));
            let err = nm.normal(x, y).dot(&target).clamp(-1.0, 1.0).acos();
            assert!(err < 1e-4, "({x},{y}): {err}");
        }
    }
}

#[test]
fn smoothness_on_perspective_sphere_is_accurate() {
    let out = render_scene(&sphere_scene(96, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let nm = solve(
        &out.stack,
        &out.view,
        1.5,
        SolveMode::Perspective,
        Strategy::Smoothness,
        DEFAULT_RHO_MIN,
    )
    .unwrap();
    let (errors, mask) = metrics::angular_error_map(&nm, &out.gt_normals).unwrap();
    let report = metrics::summarize(&errors, &mask).unwrap();
    assert!(report.mean < 5.0, "smoothness mean {}", report.mean);
}

#[test]
fn solve_identity_on_plane_with_oracle() {
    let mut scene = tilted_plane_scene(32, 32, [0.2, 0.3, 1.0], ReflectionType::Diffuse);
    scene.projection = Projection::Perspective;
    let out = render_scene(&scene, Projection::Perspective).unwrap();
    let nm = solve(
        &out.stack,
        &out.view,
        1.5,
        SolveMode::Perspective,
        Strategy::Oracle(&out.gt_normals),
        DEFAULT_RHO_MIN,
    )
    .unwrap();
    let (errors, mask) = metrics::angular_error_map(&nm, &out.gt_normals).unwrap();
    let report = metrics::summarize(&errors, &mask).unwrap();
    assert!(report.mean < 0.5, "mean {}", report.mean);
}

#[test]
fn solve_constant_stack_returns_view_directions() {
    let (w, h) = (6, 6);
    let images = [
        crate::image::FloatMap::constant(w, h, 2.0),
        crate::image::FloatMap::constant(w, h, 2.0),
        crate::image::FloatMap::constant(w, h, 2.0),
        crate::image::FloatMap::constant(w, h, 2.0),
    ];
    let stack = PolarizerStack::new(images).unwrap();
    let view = DirectionMap::orthographic(w, h);
    let nm = solve(
        &stack,
        &view,
        1.5,
        SolveMode::Orthographic,
        Strategy::Smoothness,
        DEFAULT_RHO_MIN,
    )
    .unwrap();
    for y in 0..h {
        for x in 0..w {
            assert!(nm.valid().get(x, y));
            assert!((nm.normal(x, y) - nalgebra::Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }
}

#[test]
fn wrong_eta_degrades_oracle_accuracy() {
    let out = render_scene(&sphere_scene(48, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let mean_for = |eta: f64| {
        let nm = solve(
            &out.stack,
            &out.view,
            eta,
            SolveMode::Perspective,
            Strategy::Oracle(&out.gt_normals),
            DEFAULT_RHO_MIN,
        )
        .unwrap();
        let (errors, mask) = metrics::angular_error_map(&nm, &out.gt_normals).unwrap();
        metrics::summarize(&errors, &mask).unwrap().mean
    };
    let matched = mean_for(1.5);
    let mismatched = mean_for(1.8);
    assert!(
        mismatched > matched,
        "matched {matched} vs mismatched {mismatched}"
    );
}

#[test]
fn solve_equivariant_under_intensity_scaling() {
    let out = render_scene(&sphere_scene(32, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let scale = 4.0; // power of two keeps the decomposition bit-exact
    let scaled_images: Vec<crate::image::FloatMap> = out
        .stack
        .images()
        .iter()
        .map(|img| {
            crate::image::FloatMap::from_fn(img.width(), img.height(), |x, y| {
                scale * img.get(x, y)
            })
        })
        .collect();
    let scaled = PolarizerStack::new(scaled_images.try_into().unwrap()).unwrap();
    let solve_with = |stack: &PolarizerStack| {
        solve(
            stack,
            &out.view,
            1.5,
            SolveMode::Perspective,
            Strategy::Smoothness,
            DEFAULT_RHO_MIN,
        )
        .unwrap()
    };
    let a = solve_with(&out.stack);
    let b = solve_with(&scaled);
    for y in 0..a.height() {
        for x in 0..a.width() {
            assert_eq!(a.valid().get(x, y), b.valid().get(x, y));
            if a.valid().get(x, y) {
                assert_eq!(a.normal(x, y), b.normal(x, y));
            }
        }
    }
}

#[test]
fn disambiguate_never_invents_vectors() {
    let out = render_scene(&sphere_scene(32, ReflectionType::Diffuse), Projection::Perspective)
        .unwrap();
    let stokes = decompose(&out.stack, DEFAULT_RHO_MIN);
    let cands = candidate_normals(&stokes, &out.view, 1.5, SolveMode::Perspective).unwrap();
    for strategy in [Strategy::Smoothness, Strategy::Oracle(&out.gt_normals)] {
        let nm = disambiguate(&cands, &out.view, strategy).unwrap();
        for y in 0..nm.height() {
            for x in 0..nm.width() {
                if !nm.valid().get(x, y) {
                    continue;
                }
                let n = nm.normal(x, y);
                assert!(
                    cands.at(x, y).iter().any(|c| (c.normal - n).norm() < 1e-15),
                    "({x},{y}) emitted a vector absent from its candidate list"
                );
            }
        }
    }
}

#[test]
fn ortho_candidate_source_packs_four_slots() {
    let source = OrthoCandidates { eta: 1.5 };
    let theta = 0.5;
    let rho = dop_diffuse(theta, 1.5).unwrap();
    let cands = source.candidates(rho, 0.7);
    assert!(cands.iter().all(|c| c.is_some()));
    // Diffuse slots carry the diffuse zenith.
    let n = cands[0].unwrap();
    assert!((n.z.acos() - theta).abs() < 1e-6);
    // rho = 1 is unreachable for diffuse: empty diffuse slots, specular at
    // the Brewster angle.
    let cands = source.candidates(1.0, 0.7);
    assert!(cands[0].is_none() && cands[1].is_none());
    let ns = cands[2].unwrap();
    assert!((ns.z.acos() - crate::fresnel::brewster_angle(1.5)).abs() < 1e-6);
}
