//! 2x2 max pooling with stride 2; the backward pass routes gradients to the
//! recorded argmax locations.

use super::Layer;
use crate::scalar::Element;
use crate::tensor::{idx4, Tensor};

pub struct MaxPool2<T: Element> {
    argmax: Option<(Vec<usize>, Vec<usize>)>, // (input shape, flat argmax per output)
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> MaxPool2<T> {
    pub fn new() -> Self {
        Self {
            argmax: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Element> Default for MaxPool2<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Layer<T> for MaxPool2<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().expect("pool input is 4d");
        assert!(h % 2 == 0 && w % 2 == 0, "pooled dims must be even");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let mut argmax = vec![0usize; b * c * oh * ow];
        let xd = x.data();
        let od = out.data_mut();
        let mut oi = 0;
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = idx4(x.shape(), bi, ci, 2 * oy, 2 * ox);
                        let mut best = xd[best_idx];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = idx4(x.shape(), bi, ci, 2 * oy + dy, 2 * ox + dx);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                        od[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        self.argmax = Some((x.shape().to_vec(), argmax));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (shape, argmax) = self.argmax.take().expect("forward before backward");
        let mut grad_in = Tensor::zeros(&shape);
        let gi = grad_in.data_mut();
        for (g, &idx) in grad_out.data().iter().zip(&argmax) {
            gi[idx] += *g;
        }
        grad_in
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}
