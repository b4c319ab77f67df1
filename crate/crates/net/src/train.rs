//! Deterministic training loop: seeded shuffling and cropping, Adam with
//! cosine decay, per-epoch mean losses.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{batch_inputs, crop_sample, Sample};
use crate::loss::masked_cosine_loss;
use crate::model::{Model, ModelError};
use crate::optim::{Adam, Schedule};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("crop size {0} must be a positive multiple of 16")]
    BadCrop(usize),
    #[error("learning rate must be finite and >= 0, got {0}")]
    BadLr(f64),
    #[error("non-finite loss at step {step} (epoch {epoch}): {loss}")]
    NonFiniteLoss { step: usize, epoch: usize, loss: f64 },
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

fn default_heads() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub crop: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_heads")]
    pub heads: usize,
}

impl TrainConfig {
    /// Desk-scale defaults; the full-scale regime (crop 512, batch 16,
    /// 1000 epochs, lr 1e-4) is reachable through the same fields.
    pub fn toy(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 1000,
            crop: 64,
            seed,
            schedule: Schedule::Cosine,
            heads: 8,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.crop == 0 || self.crop % 16 != 0 {
            return Err(TrainError::BadCrop(self.crop));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::BadLr(self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainResult {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        *self.step_losses.last().unwrap_or(&f64::NAN)
    }
}

/// Train in place. Deterministic for a fixed seed: shuffle order, crop
/// positions, and arithmetic are all reproducible.
pub fn train(
    model: &mut Model<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch = cfg.batch_size.min(samples.len()).max(1);
    let steps_per_epoch = samples.len() / batch;
    let total_steps = steps_per_epoch.max(1) * cfg.epochs;
    let mut adam = Adam::new(cfg.learning_rate, cfg.schedule, total_steps);
    let mut result = TrainResult::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_count = 0usize;
        for chunk in order.chunks(batch) {
            if chunk.len() < batch {
                break;
            }
            let cropped: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let s = &samples[i];
                    let [_, h, w]: [usize; 3] = s.input.shape().try_into().unwrap();
                    assert!(
                        h >= cfg.crop && w >= cfg.crop,
                        "sample {i} smaller than the crop"
                    );
                    let x0 = rng.gen_range(0..=w - cfg.crop);
                    let y0 = rng.gen_range(0..=h - cfg.crop);
                    crop_sample(s, x0, y0, cfg.crop)
                })
                .collect();
            let refs: Vec<&Sample> = cropped.iter().collect();
            let (input, target, valid) = batch_inputs::<f32>(&refs);

            model.zero_grad();
            let pred = model.forward(&input)?;
            let (loss, grad) = masked_cosine_loss(&pred, &target, &valid);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: result.step_losses.len(),
                    epoch,
                    loss,
                });
            }
            model.backward(&grad);
            adam.step(model);
            result.step_losses.push(loss);
            epoch_sum += loss;
            epoch_count += 1;
        }
        if epoch_count > 0 {
            result.epoch_losses.push(epoch_sum / epoch_count as f64);
        }
    }
    Ok(result)
}
