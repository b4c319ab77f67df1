use super::Layer;
use crate::scalar::Element;
use crate::tensor::Tensor;

pub struct Relu<T: Element> {
    mask: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Element> Relu<T> {
    pub fn new() -> Self {
        Self {
            mask: None,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T: Element> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(x.shape());
        let mut mask = vec![false; x.numel()];
        for ((o, m), v) in out.data_mut().iter_mut().zip(&mut mask).zip(x.data()) {
            if *v > T::ZERO {
                *o = *v;
                *m = true;
            }
        }
        self.mask = Some(mask);
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("forward before backward");
        let mut grad_in = Tensor::zeros(grad_out.shape());
        for ((gi, m), g) in grad_in.data_mut().iter_mut().zip(&mask).zip(grad_out.data()) {
            if *m {
                *gi = *g;
            }
        }
        grad_in
    }

    fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}
