//! Adam with an optional cosine learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::scalar::Element;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    #[default]
    Cosine,
}

impl Schedule {
    /// Learning rate at step `t` of `total` (0-based steps).
    pub fn lr_at(&self, base: f64, t: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                if total == 0 {
                    return base;
                }
                let progress = (t as f64 / total as f64).min(1.0);
                base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

pub struct Adam {
    base_lr: f64,
    schedule: Schedule,
    total_steps: usize,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(base_lr: f64, schedule: Schedule, total_steps: usize) -> Self {
        Self {
            base_lr,
            schedule,
            total_steps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.base_lr, self.step, self.total_steps)
    }

    /// Apply one update from the gradients accumulated in the model.
    /// Moment state lives in f64 regardless of the training precision.
    pub fn step<T: Element>(&mut self, model: &mut Model<T>) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        model.for_each_param(&mut |_, p| {
            if idx == m.len() {
                m.push(vec![0.0; p.numel()]);
                v.push(vec![0.0; p.numel()]);
            }
            let (pm, pv) = (&mut m[idx], &mut v[idx]);
            assert_eq!(pm.len(), p.numel(), "parameter set changed between steps");
            let grads: Vec<f64> = p.grad().expect("parameter gradient").iter()
                .map(|g| g.to_f64())
                .collect();
            for (k, (d, g)) in p.data_mut().iter_mut().zip(grads).enumerate() {
                pm[k] = ADAM_BETA1 * pm[k] + (1.0 - ADAM_BETA1) * g;
                pv[k] = ADAM_BETA2 * pv[k] + (1.0 - ADAM_BETA2) * g * g;
                let mhat = pm[k] / bias1;
                let vhat = pv[k] / bias2;
                let upd = lr * mhat / (vhat.sqrt() + ADAM_EPS);
                *d = T::from_f64(d.to_f64() - upd);
            }
            idx += 1;
        });
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}
