//! Angular-error metrics and the cosine training loss.
//!
//! Errors are reported in degrees to match common normal-estimation tables;
//! everything internal stays in radians.

use serde::Serialize;
use thiserror::Error;

use crate::image::{BoolMap, FloatMap};
use crate::solver::NormalMap;

/// Accuracy thresholds in degrees, in reporting order.
pub const ACCURACY_THRESHOLDS_DEG: [f64; 3] = [11.25, 22.5, 30.0];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("normal maps disagree in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no jointly valid pixels")]
    NoValidPixels,
}

/// Summary statistics over an angular-error map.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Mean angular error, degrees.
    pub mean: f64,
    /// Median angular error (lower of the two central values for even
    /// counts), degrees.
    pub median: f64,
    /// Root-mean-square angular error, degrees.
    pub rmse: f64,
    /// Percentage of pixels with error below 11.25 degrees.
    pub acc_11_25: f64,
    /// Percentage of pixels with error below 22.5 degrees.
    pub acc_22_5: f64,
    /// Percentage of pixels with error below 30 degrees.
    pub acc_30: f64,
    pub n_valid: usize,
}

impl MetricsReport {
    /// Plain-text table in the usual column order.
    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n{:8.2} {:8.2} {:8.2} {:8.1} {:8.1} {:8.1}\n",
            "Mean", "Median", "RMSE", "11.25", "22.5", "30.0",
            self.mean, self.median, self.rmse, self.acc_11_25, self.acc_22_5, self.acc_30
        )
    }
}

fn check_dims(pred: &NormalMap, gt: &NormalMap) -> Result<(), MetricsError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(MetricsError::DimensionMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    Ok(())
}

/// Per-pixel angular error in degrees over the joint validity mask.
pub fn angular_error_map(
    pred: &NormalMap,
    gt: &NormalMap,
) -> Result<(FloatMap, BoolMap), MetricsError> {
    check_dims(pred, gt)?;
    let (w, h) = (pred.width(), pred.height());
    let mut errors = FloatMap::zeros(w, h);
    let mut mask = BoolMap::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !(pred.valid().get(x, y) && gt.valid().get(x, y)) {
                continue;
            }
            let dot = pred.normal(x, y).dot(&gt.normal(x, y)).clamp(-1.0, 1.0);
            errors.set(x, y, dot.acos().to_degrees());
            mask.set(x, y, true);
        }
    }
    Ok((errors, mask))
}

/// Reduce an error map to the report statistics over its mask.
pub fn summarize(errors: &FloatMap, mask: &BoolMap) -> Result<MetricsReport, MetricsError> {
    let mut values: Vec<f64> = Vec::new();
    for y in 0..errors.height() {
        for x in 0..errors.width() {
            if mask.get(x, y) {
                values.push(errors.get(x, y));
            }
        }
    }
    if values.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let median = values[(n - 1) / 2];
    let rmse = (values.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let acc = |thresh: f64| 100.0 * values.iter().filter(|&&e| e < thresh).count() as f64 / n as f64;
    Ok(MetricsReport {
        mean,
        median,
        rmse,
        acc_11_25: acc(ACCURACY_THRESHOLDS_DEG[0]),
        acc_22_5: acc(ACCURACY_THRESHOLDS_DEG[1]),
        acc_30: acc(ACCURACY_THRESHOLDS_DEG[2]),
        n_valid: n,
    })
}

/// Mean of `1 - pred . gt` over jointly valid pixels; 0 at perfect
/// alignment, 2 at exact opposition.
pub fn cosine_loss(pred: &NormalMap, gt: &NormalMap) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            if pred.valid().get(x, y) && gt.valid().get(x, y) {
                sum += 1.0 - pred.normal(x, y).dot(&gt.normal(x, y));
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::NoValidPixels);
    }
    Ok(sum / count as f64)
}
