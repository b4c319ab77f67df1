//! Desk-scale trainable encoder-decoder with a multi-head self-attention
//! bottleneck: hand-rolled tensors, exact reverse-mode gradients for every
//! layer, Adam with cosine decay, and PSFP checkpoints.

pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod overfit_task;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use model::{Model, ModelConfig, ModelError};
pub use scalar::Element;
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainError, TrainResult};
