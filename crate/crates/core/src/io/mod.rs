//! File formats: PFM images and the PSFP multi-channel tensor container.

pub mod convert;
pub mod pfm;
pub mod psfp;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
}

impl IoError {
    pub fn format(msg: impl Into<String>) -> Self {
        IoError::Format(msg.into())
    }
}
