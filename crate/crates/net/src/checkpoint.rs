//! Checkpoints: one PSFP tensor per parameter plus a JSON manifest holding
//! the names, shapes, model config, and step counter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use polarsfp_core::io::psfp::{self, PsfpTensor};
use polarsfp_core::io::IoError;

use crate::model::{Model, ModelConfig, ModelError};
use crate::scalar::Element;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("fs: {0}")]
    Fs(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("parameter {name}: expected shape {expected:?}, file has {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("manifest lists {manifest} parameters, model has {model}")]
    ParamCountMismatch { manifest: usize, model: usize },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub step: usize,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn param_file(name: &str) -> String {
    format!("{name}.psfp")
}

pub fn save<T: Element>(
    dir: &Path,
    model: &mut Model<T>,
    step: usize,
) -> Result<(), CheckpointError> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    let mut entries = Vec::new();
    let mut io_result: Result<(), CheckpointError> = Ok(());
    model.for_each_param(&mut |name, p| {
        if io_result.is_err() {
            return;
        }
        entries.push(ParamEntry {
            name: name.to_string(),
            shape: p.shape().to_vec(),
        });
        let data: Vec<f32> = p.data().iter().map(|v| v.to_f64() as f32).collect();
        let tensor = match PsfpTensor::new(p.shape().to_vec(), data) {
            Ok(t) => t,
            Err(e) => {
                io_result = Err(e.into());
                return;
            }
        };
        if let Err(e) = psfp::write(&params_dir.join(param_file(name)), &tensor) {
            io_result = Err(e.into());
        }
    });
    io_result?;
    let manifest = Manifest {
        config: model.config.clone(),
        step,
        params: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load<T: Element>(dir: &Path) -> Result<(Model<T>, usize), CheckpointError> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    // The seed only sets the initialization that checkpoint values replace.
    let mut model = Model::new(manifest.config.clone(), 0)?;
    let params_dir = dir.join("params");
    let mut count = 0usize;
    let mut result: Result<(), CheckpointError> = Ok(());
    model.for_each_param(&mut |name, p| {
        count += 1;
        if result.is_err() {
            return;
        }
        let tensor = match psfp::read(&params_dir.join(param_file(name))) {
            Ok(t) => t,
            Err(e) => {
                result = Err(e.into());
                return;
            }
        };
        if tensor.dims != p.shape() {
            result = Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: p.shape().to_vec(),
                got: tensor.dims.clone(),
            });
            return;
        }
        for (d, v) in p.data_mut().iter_mut().zip(&tensor.data) {
            *d = T::from_f64(*v as f64);
        }
    });
    result?;
    if manifest.params.len() != count {
        return Err(CheckpointError::ParamCountMismatch {
            manifest: manifest.params.len(),
            model: count,
        });
    }
    Ok((model, manifest.step))
}
