//! Per-pixel viewing encodings fed to the network alongside the polarization
//! representation: ray directions `V`, normalized coordinates `Vc`, and
//! NeRF-style frequency encoding `Vp`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::camera::CameraModel;
use crate::image::FloatMap;

/// Default number of frequency bands for the positional encoding.
pub const DEFAULT_PE_BANDS: usize = 6;

#[derive(Debug, Error)]
pub enum ViewingError {
    #[error("image dimensions must be at least 2x2, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("positional encoding needs at least one band")]
    NoBands,
    #[error("positional encoding expects 2-channel normalized coordinates, got {0}")]
    NotCoords(usize),
    #[error("camera: {0}")]
    Camera(#[from] crate::camera::CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    /// Unit surface-to-camera ray per pixel (3 channels).
    V,
    /// Pixel coordinates normalized to `[-1, 1]` (2 channels).
    Vc,
    /// Frequency encoding of `Vc` (4 * bands channels).
    Vp,
}

/// A stack of encoding channels of one kind.
#[derive(Debug, Clone)]
pub struct ViewingEncoding {
    pub kind: EncodingKind,
    pub channels: Vec<FloatMap>,
}

impl ViewingEncoding {
    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }
}

/// Per-pixel unit viewing directions `normalize(-(u-cx)/fx, -(r-cy)/fy, 1)`,
/// surface-to-camera, so the principal point yields `(0, 0, 1)`.
pub fn viewing_direction_map(cam: &CameraModel) -> Result<ViewingEncoding, ViewingError> {
    cam.validate()?;
    let (w, h) = (cam.width, cam.height);
    let mut channels = vec![FloatMap::zeros(w, h); 3];
    for y in 0..h {
        for x in 0..w {
            let v = cam.view_direction(x as f64, y as f64);
            for axis in 0..3 {
                channels[axis].set(x, y, v[axis]);
            }
        }
    }
    Ok(ViewingEncoding {
        kind: EncodingKind::V,
        channels,
    })
}

/// Pixel indices mapped affinely onto `[-1, 1]` per axis.
pub fn normalized_coords_map(width: usize, height: usize) -> Result<ViewingEncoding, ViewingError> {
    if width < 2 || height < 2 {
        return Err(ViewingError::TooSmall(width, height));
    }
    let u = FloatMap::from_fn(width, height, |x, _| {
        2.0 * x as f64 / (width - 1) as f64 - 1.0
    });
    let v = FloatMap::from_fn(width, height, |_, y| {
        2.0 * y as f64 / (height - 1) as f64 - 1.0
    });
    Ok(ViewingEncoding {
        kind: EncodingKind::Vc,
        channels: vec![u, v],
    })
}

/// NeRF-style frequency encoding of normalized coordinates: for each
/// coordinate `x`, the channels `(sin 2^k pi x, cos 2^k pi x)` for
/// `k = 0..bands`, giving `4 * bands` channels total.
pub fn positional_encoding_map(
    coords: &ViewingEncoding,
    bands: usize,
) -> Result<ViewingEncoding, ViewingError> {
    if bands == 0 {
        return Err(ViewingError::NoBands);
    }
    if coords.kind != EncodingKind::Vc || coords.channels.len() != 2 {
        return Err(ViewingError::NotCoords(coords.channels.len()));
    }
    let (w, h) = (coords.width(), coords.height());
    let mut channels = Vec::with_capacity(4 * bands);
    for coord in &coords.channels {
        for k in 0..bands {
            let freq = (1u64 << k) as f64 * PI;
            channels.push(FloatMap::from_fn(w, h, |x, y| (freq * coord.get(x, y)).sin()));
            channels.push(FloatMap::from_fn(w, h, |x, y| (freq * coord.get(x, y)).cos()));
        }
    }
    Ok(ViewingEncoding {
        kind: EncodingKind::Vp,
        channels,
    })
}
