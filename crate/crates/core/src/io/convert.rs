//! Conversions between domain types and the PSFP tensor container.
//!
//! Image-like tensors are stored `[h, w, c]`. Normal maps encode validity
//! implicitly: invalid pixels hold the zero vector, and readers treat any
//! pixel with norm below 0.5 as invalid.

use nalgebra::Vector3;

use super::psfp::PsfpTensor;
use super::IoError;
use crate::image::{BoolMap, FloatMap};
use crate::polar::StokesMaps;
use crate::solver::NormalMap;
use crate::viewing::ViewingEncoding;

/// Interleave single-channel maps into one `[h, w, c]` tensor.
pub fn maps_to_psfp(maps: &[&FloatMap]) -> Result<PsfpTensor, IoError> {
    let (w, h) = (maps[0].width(), maps[0].height());
    if maps.iter().any(|m| !m.same_dims(maps[0])) {
        return Err(IoError::format("channel maps disagree in size"));
    }
    let c = maps.len();
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            for m in maps {
                data.push(m.get(x, y) as f32);
            }
        }
    }
    PsfpTensor::new(vec![h, w, c], data)
}

/// Split a `[h, w, c]` tensor back into per-channel maps.
pub fn psfp_to_maps(tensor: &PsfpTensor) -> Result<Vec<FloatMap>, IoError> {
    let [h, w, c]: [usize; 3] = tensor
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| IoError::format(format!("expected [h, w, c] dims, got {:?}", tensor.dims)))?;
    let mut maps = vec![FloatMap::zeros(w, h); c];
    for y in 0..h {
        for x in 0..w {
            for (ci, m) in maps.iter_mut().enumerate() {
                m.set(x, y, tensor.data[(y * w + x) * c + ci] as f64);
            }
        }
    }
    Ok(maps)
}

pub fn stokes_to_psfp(stokes: &StokesMaps) -> Result<PsfpTensor, IoError> {
    let (w, h) = (stokes.width(), stokes.height());
    let valid = FloatMap::from_fn(w, h, |x, y| {
        if stokes.valid.get(x, y) {
            1.0
        } else {
            0.0
        }
    });
    maps_to_psfp(&[&stokes.i_un, &stokes.rho, &stokes.phi, &valid])
}

pub fn psfp_to_stokes(tensor: &PsfpTensor) -> Result<StokesMaps, IoError> {
    let maps = psfp_to_maps(tensor)?;
    if maps.len() != 4 {
        return Err(IoError::format(format!(
            "Stokes tensor needs 4 channels, got {}",
            maps.len()
        )));
    }
    let (w, h) = (maps[0].width(), maps[0].height());
    let mut valid = BoolMap::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            valid.set(x, y, maps[3].get(x, y) > 0.5);
        }
    }
    Ok(StokesMaps {
        i_un: maps[0].clone(),
        rho: maps[1].clone(),
        phi: maps[2].clone(),
        valid,
    })
}

pub fn normals_to_psfp(normals: &NormalMap) -> Result<PsfpTensor, IoError> {
    let (w, h) = (normals.width(), normals.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            if normals.valid().get(x, y) {
                let n = normals.normal(x, y);
                data.extend([n.x as f32, n.y as f32, n.z as f32]);
            } else {
                data.extend([0.0, 0.0, 0.0]);
            }
        }
    }
    PsfpTensor::new(vec![h, w, 3], data)
}

pub fn psfp_to_normals(tensor: &PsfpTensor) -> Result<NormalMap, IoError> {
    let [h, w, c]: [usize; 3] = tensor
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| IoError::format(format!("expected [h, w, 3] dims, got {:?}", tensor.dims)))?;
    if c != 3 {
        return Err(IoError::format(format!(
            "normal map needs 3 channels, got {c}"
        )));
    }
    let mut out = NormalMap::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * 3;
            let v = Vector3::new(
                tensor.data[base] as f64,
                tensor.data[base + 1] as f64,
                tensor.data[base + 2] as f64,
            );
            let norm = v.norm();
            if norm > 0.5 {
                out.set(x, y, v / norm);
            }
        }
    }
    Ok(out)
}

pub fn encoding_to_psfp(enc: &ViewingEncoding) -> Result<PsfpTensor, IoError> {
    let refs: Vec<&FloatMap> = enc.channels.iter().collect();
    maps_to_psfp(&refs)
}
