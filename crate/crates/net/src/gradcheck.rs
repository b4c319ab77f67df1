//! Central finite-difference gradient checking. The numeric side only ever
//! calls `forward`, so it stays independent of the analytic backward passes
//! it verifies.
//!
//! Networks with ReLU and max-pool units are piecewise smooth: a probe
//! interval that straddles a kink yields a central difference that estimates
//! no derivative at all. Each probe is therefore taken at two step sizes;
//! disagreement between them flags a kink crossing and the probe is
//! discarded rather than compared. A wrong analytic gradient is still
//! caught, since both estimates then agree with each other and not with it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::Layer;
use crate::model::Model;
use crate::tensor::Tensor;

/// Central-difference step; with f64 arithmetic the truncation and rounding
/// cross over around here.
pub const FD_STEP: f64 = 1e-4;

/// Relative error with a floor that keeps near-zero gradients from
/// dominating: `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Two-scale central difference. `eval` computes the loss with the probed
/// scalar shifted by its argument. Returns `None` when the half-step and
/// full-step estimates disagree, i.e. the interval contains a kink.
fn consistent_central_diff(mut eval: impl FnMut(f64) -> f64) -> Option<f64> {
    let n1 = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
    let n2 = (eval(FD_STEP / 2.0) - eval(-FD_STEP / 2.0)) / FD_STEP;
    let scale = n1.abs().max(n2.abs()).max(1e-3);
    // Smooth probes agree to truncation order (~1e-8 here); anything beyond
    // a few 1e-6 means the interval is not smooth.
    if (n1 - n2).abs() > 3e-6 * scale {
        return None;
    }
    Some(n2)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Probes discarded because the interval was not smooth.
    pub skipped: usize,
    pub worst: f64,
    /// Where the worst relative error was seen, for diagnostics.
    pub worst_site: String,
}

impl GradCheckReport {
    fn update(&mut self, analytic: f64, numeric: Option<f64>, site: &str) {
        let Some(numeric) = numeric else {
            self.skipped += 1;
            return;
        };
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.worst {
            self.worst = rel;
            self.worst_site = format!("{site} analytic={analytic} numeric={numeric}");
        }
    }
}

/// Check one layer in f64: the probe loss is `sum(r * layer(x))` for fixed
/// random weights `r`, so `dL/dy = r` exactly and parameter gradients can
/// be compared against central differences. Checks every parameter element
/// and every input element.
pub fn check_layer(
    layer: &mut dyn Layer<f64>,
    input_shape: &[usize],
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = input_shape.iter().product();
    let x_data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // The probe length must match the output size; run once to find it.
    let x = Tensor::from_vec(input_shape, x_data.clone());
    let y0 = layer.forward(&x);
    let probe: Vec<f64> = (0..y0.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss_of = |y: &Tensor<f64>| -> f64 {
        y.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
    };

    // Analytic gradients.
    layer.visit_params("p", &mut |_, p| p.zero_grad());
    let y = layer.forward(&x);
    let grad_y = Tensor::from_vec(y.shape(), probe.clone());
    let grad_x = layer.backward(&grad_y);

    let mut report = GradCheckReport::default();

    // Input gradient.
    for i in 0..n {
        let numeric = consistent_central_diff(|delta| {
            let mut data = x_data.clone();
            data[i] += delta;
            loss_of(&layer.forward(&Tensor::from_vec(input_shape, data)))
        });
        report.update(grad_x.data()[i], numeric, &format!("input[{i}]"));
    }

    // Parameter gradients: perturb through the visitor, one element at a
    // time. Collect analytic values first.
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    layer.visit_params("p", &mut |_, p| {
        analytic.push(p.grad().unwrap().to_vec());
    });
    let param_sizes: Vec<usize> = analytic.iter().map(|g| g.len()).collect();
    for (pi, size) in param_sizes.iter().enumerate() {
        for k in 0..*size {
            let numeric = consistent_central_diff(|delta| {
                let mut idx = 0;
                layer.visit_params("p", &mut |_, p| {
                    if idx == pi {
                        p.data_mut()[k] += delta;
                    }
                    idx += 1;
                });
                let l = loss_of(&layer.forward(&x));
                let mut idx = 0;
                layer.visit_params("p", &mut |_, p| {
                    if idx == pi {
                        p.data_mut()[k] -= delta;
                    }
                    idx += 1;
                });
                l
            });
            report.update(analytic[pi][k], numeric, &format!("param{pi}[{k}]"));
        }
    }
    report
}

/// Check the full model against central differences of the masked cosine
/// loss, sampling `per_tensor` elements from every parameter tensor plus a
/// sample of input elements.
pub fn check_model(
    model: &mut Model<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    valid: &[bool],
    per_tensor: usize,
    seed: u64,
) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss_of = |m: &mut Model<f64>, x: &Tensor<f64>| -> f64 {
        let y = m.forward(x).expect("forward");
        crate::loss::masked_cosine_loss(&y, target, valid).0
    };

    model.zero_grad();
    let y = model.forward(input).expect("forward");
    let (_, grad_loss) = crate::loss::masked_cosine_loss(&y, target, valid);
    let grad_in = model.backward(&grad_loss);

    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.for_each_param(&mut |name, p| {
        analytic.push((name.to_string(), p.grad().unwrap().to_vec()));
    });

    let mut report = GradCheckReport::default();

    for (pi, (name, grads)) in analytic.iter().enumerate() {
        for _ in 0..per_tensor.min(grads.len()) {
            let k = rng.gen_range(0..grads.len());
            let numeric = consistent_central_diff(|delta| {
                let mut idx = 0;
                model.for_each_param(&mut |_, p| {
                    if idx == pi {
                        p.data_mut()[k] += delta;
                    }
                    idx += 1;
                });
                let l = loss_of(model, input);
                let mut idx = 0;
                model.for_each_param(&mut |_, p| {
                    if idx == pi {
                        p.data_mut()[k] -= delta;
                    }
                    idx += 1;
                });
                l
            });
            report.update(grads[k], numeric, &format!("{name}[{k}]"));
        }
    }

    // A sample of input-gradient elements.
    let n = input.numel();
    for _ in 0..(4 * per_tensor).min(n) {
        let i = rng.gen_range(0..n);
        let numeric = consistent_central_diff(|delta| {
            let mut x = input.clone();
            x.data_mut()[i] += delta;
            loss_of(model, &x)
        });
        report.update(grad_in.data()[i], numeric, &format!("input[{i}]"));
    }
    report
}
