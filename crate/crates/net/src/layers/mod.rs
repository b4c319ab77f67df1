//! Network layers with exact reverse-mode gradients. Every layer caches what
//! its backward pass needs during `forward`; `backward` accumulates parameter
//! gradients and returns the gradient with respect to its input.

mod attention;
mod conv;
mod norm;
mod normalize;
mod pool;
mod relu;
mod upsample;

pub use attention::{AttentionBlock, Mlp, MultiHeadAttention};
pub use conv::{Conv2d, Linear};
pub use norm::{BatchNorm2d, InstanceNorm2d, LayerNorm, Norm2d, NormKind};
pub use normalize::UnitNormalize;
pub use pool::MaxPool2;
pub use relu::Relu;
pub use upsample::BilinearUp2;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Element;
use crate::tensor::Tensor;

/// Uniform Kaiming-style initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn init_uniform<T: Element>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).with_grad()
}

/// Common layer interface; used directly by the model wiring and by the
/// finite-difference gradient checker.
pub trait Layer<T: Element> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T>;
    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T>;
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}
