//! Shape-from-polarization toolkit: polarization image decomposition and
//! synthesis, Fresnel reflectance physics, a physics-based per-pixel normal
//! solver with a synthetic renderer, a depth-camera ground-truth preparation
//! pipeline, viewing encodings, and angular-error metrics.
//!
//! Geometry conventions are documented in [`camera`].

pub mod camera;
pub mod fresnel;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod polar;
pub mod solver;
pub mod viewing;

pub use camera::CameraModel;
pub use image::{BoolMap, FloatMap};

/// 3-vector used for normals, viewing directions, and points.
pub type Vec3 = nalgebra::Vector3<f64>;
