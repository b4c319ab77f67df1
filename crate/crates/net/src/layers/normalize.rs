//! Channel-wise L2 normalization of the 3-channel output so the cosine loss
//! sees unit vectors. `y = x / sqrt(|x|^2 + eps)`: smooth everywhere, finite
//! even for an all-zero input.

use super::Layer;
use crate::scalar::Element;
use crate::tensor::{idx4, Tensor};

pub const NORMALIZE_EPS: f64 = 1e-8;

pub struct UnitNormalize<T: Element> {
    cached_input: Option<Tensor<T>>,
}

impl<T: Element> UnitNormalize<T> {
    pub fn new() -> Self {
        Self { cached_input: None }
    }
}

impl<T: Element> Default for UnitNormalize<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Layer<T> for UnitNormalize<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().expect("normalize input is 4d");
        let mut out = Tensor::zeros(x.shape());
        let xd = x.data();
        let od = out.data_mut();
        let eps = T::from_f64(NORMALIZE_EPS);
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let mut sq = eps;
                    for ci in 0..c {
                        let v = xd[idx4(x.shape(), bi, ci, y, xx)];
                        sq += v * v;
                    }
                    let inv = T::ONE / sq.sqrt();
                    for ci in 0..c {
                        let i = idx4(x.shape(), bi, ci, y, xx);
                        od[i] = xd[i] * inv;
                    }
                }
            }
        }
        self.cached_input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.cached_input.take().expect("forward before backward");
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().unwrap();
        let mut grad_in = Tensor::zeros(x.shape());
        let xd = x.data();
        let gd = grad_out.data();
        let gi = grad_in.data_mut();
        let eps = T::from_f64(NORMALIZE_EPS);
        for bi in 0..b {
            for y in 0..h {
                for xx in 0..w {
                    let mut sq = eps;
                    let mut xg = T::ZERO;
                    for ci in 0..c {
                        let i = idx4(x.shape(), bi, ci, y, xx);
                        sq += xd[i] * xd[i];
                        xg += xd[i] * gd[i];
                    }
                    let s = sq.sqrt();
                    let inv = T::ONE / s;
                    let inv3 = inv / sq;
                    for ci in 0..c {
                        let i = idx4(x.shape(), bi, ci, y, xx);
                        gi[i] = gd[i] * inv - xd[i] * xg * inv3;
                    }
                }
            }
        }
        grad_in
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}
