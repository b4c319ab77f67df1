//! The fixed overfitting benchmark: eight 64x64 synthetic renders with
//! varied geometry, reflectance, and refractive index, trained at one-eighth
//! width. Used by the training sanity tests and the acceptance suite.

use polarsfp_core::camera::CameraModel;
use polarsfp_core::fresnel::ReflectionType;
use polarsfp_core::polar::RepresentationVariant;
use polarsfp_core::solver::{
    render_scene, Albedo, Geometry, Projection, SceneObject, SyntheticScene,
};
use polarsfp_core::viewing::viewing_direction_map;

use crate::data::{assemble_input, pack_target, Sample};
use crate::model::{Model, ModelConfig};
use crate::train::{train, TrainConfig, TrainResult};

pub fn dataset() -> Vec<Sample> {
    let size = 64usize;
    let cam = CameraModel::pinhole(70.0, 70.0, 32.0, 32.0, size, size);
    let enc = viewing_direction_map(&cam).unwrap();
    let mut samples = Vec::new();
    for i in 0..8 {
        let t = i as f64;
        let objects = if i % 2 == 0 {
            vec![
                SceneObject {
                    geometry: Geometry::Sphere {
                        center: [0.12 * (t - 3.0), 0.09 * (3.0 - t), -3.0 - 0.2 * t],
                        radius: 1.0 + 0.05 * t,
                    },
                    eta: 1.4 + 0.03 * t,
                    reflection: if i % 4 == 0 {
                        ReflectionType::Diffuse
                    } else {
                        ReflectionType::Specular
                    },
                    albedo: Albedo::Constant { value: 1.0 },
                },
                SceneObject {
                    geometry: Geometry::Plane {
                        point: [0.0, 0.0, -6.5],
                        normal: [0.05 * t, -0.04 * t, 1.0],
                    },
                    eta: 1.5,
                    reflection: ReflectionType::Diffuse,
                    albedo: Albedo::Constant { value: 0.8 },
                },
            ]
        } else {
            vec![SceneObject {
                geometry: Geometry::Plane {
                    point: [0.0, 0.0, -2.5],
                    normal: [0.2 * (t - 4.0) / 4.0, 0.15 * (t - 3.0) / 4.0, 1.0],
                },
                eta: 1.45 + 0.02 * t,
                reflection: ReflectionType::Diffuse,
                albedo: Albedo::Constant { value: 1.0 },
            }]
        };
        let scene = SyntheticScene {
            camera: cam.clone(),
            projection: Projection::Perspective,
            objects,
        };
        let out = render_scene(&scene, Projection::Perspective).unwrap();
        let input = assemble_input(&out.stack, RepresentationVariant::Ours, Some(&enc)).unwrap();
        let (target, valid) = pack_target(&out.gt_normals);
        samples.push(Sample {
            input,
            target,
            valid,
        });
    }
    samples
}

/// Train a fresh model with the given bottleneck depth on the fixed task
/// and return the full loss history.
pub fn run(blocks: usize, seed: u64, samples: &[Sample]) -> TrainResult {
    let mut cfg = ModelConfig::toy(11);
    cfg.attention_blocks = blocks;
    let mut model = Model::<f32>::new(cfg, seed).expect("toy config is valid");
    let tc = TrainConfig::toy(seed);
    train(&mut model, samples, &tc).expect("training run")
}
