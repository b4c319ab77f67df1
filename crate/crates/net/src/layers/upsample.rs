//! Fixed 2x bilinear upsampling. Output pixel centers sample the input at
//! `(o + 0.5)/2 - 0.5` per axis with border clamping; the backward pass is
//! the exact transpose (gradient scatter with the same weights).

use super::Layer;
use crate::scalar::Element;
use crate::tensor::Tensor;

pub struct BilinearUp2<T: Element> {
    cached_shape: Option<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> BilinearUp2<T> {
    pub fn new() -> Self {
        Self {
            cached_shape: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Element> Default for BilinearUp2<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-output-index source taps along one axis: `(i0, w0, i1, w1)`.
fn axis_taps(out_len: usize, in_len: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / 2.0 - 0.5;
            let clamped = src.clamp(0.0, (in_len - 1) as f64);
            let i0 = clamped.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = clamped - i0 as f64;
            (i0, 1.0 - w1, i1, w1)
        })
        .collect()
}

impl<T: Element> Layer<T> for BilinearUp2<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().expect("upsample input is 4d");
        let (oh, ow) = (2 * h, 2 * w);
        let ytaps = axis_taps(oh, h);
        let xtaps = axis_taps(ow, w);
        let mut out = Tensor::zeros(&[b, c, oh, ow]);
        let xd = x.data();
        let od = out.data_mut();
        for plane in 0..b * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            let dst = &mut od[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, wy0, y1, wy1)) in ytaps.iter().enumerate() {
                for (ox, &(x0, wx0, x1, wx1)) in xtaps.iter().enumerate() {
                    let top = src[y0 * w + x0] * T::from_f64(wx0) + src[y0 * w + x1] * T::from_f64(wx1);
                    let bot = src[y1 * w + x0] * T::from_f64(wx0) + src[y1 * w + x1] * T::from_f64(wx1);
                    dst[oy * ow + ox] = top * T::from_f64(wy0) + bot * T::from_f64(wy1);
                }
            }
        }
        self.cached_shape = Some(x.shape().to_vec());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let shape = self.cached_shape.take().expect("forward before backward");
        let [b, c, h, w]: [usize; 4] = shape.as_slice().try_into().unwrap();
        let (oh, ow) = (2 * h, 2 * w);
        let ytaps = axis_taps(oh, h);
        let xtaps = axis_taps(ow, w);
        let mut grad_in = Tensor::zeros(&shape);
        let gd = grad_out.data();
        let gi = grad_in.data_mut();
        for plane in 0..b * c {
            let src = &gd[plane * oh * ow..(plane + 1) * oh * ow];
            let dst = &mut gi[plane * h * w..(plane + 1) * h * w];
            for (oy, &(y0, wy0, y1, wy1)) in ytaps.iter().enumerate() {
                for (ox, &(x0, wx0, x1, wx1)) in xtaps.iter().enumerate() {
                    let g = src[oy * ow + ox];
                    dst[y0 * w + x0] += g * T::from_f64(wy0 * wx0);
                    dst[y0 * w + x1] += g * T::from_f64(wy0 * wx1);
                    dst[y1 * w + x0] += g * T::from_f64(wy1 * wx0);
                    dst[y1 * w + x1] += g * T::from_f64(wy1 * wx1);
                }
            }
        }
        grad_in
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}
