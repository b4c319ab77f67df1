//! Masked cosine loss between predicted and target normal fields:
//! mean over valid pixels of `1 - pred . target`.

use crate::scalar::Element;
use crate::tensor::{idx4, Tensor};

/// Returns the loss and its gradient with respect to the prediction.
/// `valid` is `[b, h, w]` row-major; invalid pixels contribute nothing.
pub fn masked_cosine_loss<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    valid: &[bool],
) -> (f64, Tensor<T>) {
    let [b, c, h, w]: [usize; 4] = pred.shape().try_into().expect("pred is 4d");
    assert_eq!(pred.shape(), target.shape());
    assert_eq!(valid.len(), b * h * w);
    let mut count = 0usize;
    for &m in valid {
        if m {
            count += 1;
        }
    }
    let mut grad = Tensor::zeros(pred.shape());
    if count == 0 {
        return (0.0, grad);
    }
    let pd = pred.data();
    let td = target.data();
    let gd = grad.data_mut();
    let inv = 1.0 / count as f64;
    let scale = T::from_f64(-inv);
    let mut loss = 0.0;
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                if !valid[(bi * h + y) * w + x] {
                    continue;
                }
                let mut dot = 0.0;
                for ci in 0..c {
                    let i = idx4(pred.shape(), bi, ci, y, x);
                    dot += (pd[i] * td[i]).to_f64();
                    gd[i] = scale * td[i];
                }
                loss += 1.0 - dot;
            }
        }
    }
    (loss * inv, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligned_orthogonal_opposed() {
        let pred = Tensor::from_vec(&[1, 3, 1, 1], vec![0.0_f64, 0.0, 1.0]);
        let valid = vec![true];
        let (l, _) = masked_cosine_loss(&pred, &pred, &valid);
        assert!(l.abs() < 1e-15);
        let ortho = Tensor::from_vec(&[1, 3, 1, 1], vec![1.0_f64, 0.0, 0.0]);
        let (l, _) = masked_cosine_loss(&pred, &ortho, &valid);
        assert!((l - 1.0).abs() < 1e-15);
        let opp = Tensor::from_vec(&[1, 3, 1, 1], vec![0.0_f64, 0.0, -1.0]);
        let (l, _) = masked_cosine_loss(&pred, &opp, &valid);
        assert!((l - 2.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_pixels_get_zero_gradient() {
        let pred = Tensor::from_vec(&[1, 3, 1, 2], vec![0.0_f64, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let target = pred.clone();
        let valid = vec![true, false];
        let (_, grad) = masked_cosine_loss(&pred, &target, &valid);
        // Pixel 1 (second column) is masked: all its channels stay zero.
        assert_eq!(grad.data()[1], 0.0);
        assert_eq!(grad.data()[3], 0.0);
        assert_eq!(grad.data()[5], 0.0);
        assert!(grad.data()[0] != 0.0 || grad.data()[2] != 0.0 || grad.data()[4] != 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut vals = vec![0.0_f64; 2 * 3 * 2 * 2];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = ((i * 37 + 11) % 17) as f64 / 17.0 - 0.4;
        }
        let pred = Tensor::from_vec(&[2, 3, 2, 2], vals.clone());
        let tvals: Vec<f64> = vals.iter().map(|v| 0.3 - v).collect();
        let target = Tensor::from_vec(&[2, 3, 2, 2], tvals);
        let valid = vec![true, true, false, true, true, false, true, true];
        let (_, grad) = masked_cosine_loss(&pred, &target, &valid);
        let h = 1e-6;
        for i in 0..vals.len() {
            let mut plus = vals.clone();
            plus[i] += h;
            let mut minus = vals.clone();
            minus[i] -= h;
            let (lp, _) =
                masked_cosine_loss(&Tensor::from_vec(&[2, 3, 2, 2], plus), &target, &valid);
            let (lm, _) =
                masked_cosine_loss(&Tensor::from_vec(&[2, 3, 2, 2], minus), &target, &valid);
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                (grad.data()[i] - numeric).abs() < 1e-8,
                "element {i}: {} vs {numeric}",
                grad.data()[i]
            );
        }
    }
}
