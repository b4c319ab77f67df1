//! PSFP binary tensor container.
//!
//! Layout: magic `"PSFP"`, `u32` version, `u32` ndim, `u32 dims[ndim]`, then
//! an `f32` little-endian row-major payload. Version is currently 1.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::IoError;

pub const MAGIC: [u8; 4] = *b"PSFP";
pub const VERSION: u32 = 1;

/// An n-dimensional f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfpTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl PsfpTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, IoError> {
        let expect: usize = dims.iter().product();
        if data.len() != expect {
            return Err(IoError::format(format!(
                "payload length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub fn write(path: &Path, tensor: &PsfpTensor) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
    for &d in &tensor.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in &tensor.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<PsfpTensor, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(IoError::format(format!("bad PSFP magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(IoError::format(format!("unsupported PSFP version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let ndim = u32::from_le_bytes(u32buf) as usize;
    if ndim == 0 || ndim > 8 {
        return Err(IoError::format(format!("implausible PSFP ndim {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        r.read_exact(&mut u32buf)?;
        dims.push(u32::from_le_bytes(u32buf) as usize);
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; count * 4];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(PsfpTensor { dims, data })
}
