//! Batch, instance, and layer normalization with learnable affine
//! parameters. Batch and instance statistics are always computed from the
//! data passing through, which keeps training and inference on one code
//! path and every run deterministic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Layer;
use crate::scalar::Element;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Instance,
}

/// Shared worker: normalize `groups` independent slices, each a view of
/// `group_len` values gathered by `index`, with per-slice statistics.
///
/// For batch norm a group is one channel across the whole batch; for
/// instance norm it is one (batch, channel) plane.
struct GroupStats<T> {
    inv_std: Vec<T>,
    xhat: Vec<T>,
}

fn normalize_groups<T: Element>(
    x: &[T],
    group_of: impl Fn(usize) -> usize + Copy,
    n_groups: usize,
    counts: &[usize],
    run: usize,
) -> GroupStats<T> {
    // `run` consecutive elements share a group, so the per-element group
    // lookup hoists out of the inner loops.
    let mut mean = vec![T::ZERO; n_groups];
    for (ri, chunk) in x.chunks_exact(run).enumerate() {
        let g = group_of(ri * run);
        let mut acc = T::ZERO;
        for v in chunk {
            acc += *v;
        }
        mean[g] += acc;
    }
    for (m, &c) in mean.iter_mut().zip(counts) {
        *m /= T::from_f64(c as f64);
    }
    let mut var = vec![T::ZERO; n_groups];
    for (ri, chunk) in x.chunks_exact(run).enumerate() {
        let g = group_of(ri * run);
        let m = mean[g];
        let mut acc = T::ZERO;
        for v in chunk {
            let d = *v - m;
            acc += d * d;
        }
        var[g] += acc;
    }
    let mut inv_std = vec![T::ZERO; n_groups];
    for (g, iv) in inv_std.iter_mut().enumerate() {
        let v = var[g] / T::from_f64(counts[g] as f64) + T::from_f64(EPS);
        *iv = T::ONE / v.sqrt();
    }
    let mut xhat = vec![T::ZERO; x.len()];
    for (ri, (chunk, out)) in x.chunks_exact(run).zip(xhat.chunks_exact_mut(run)).enumerate() {
        let g = group_of(ri * run);
        let (m, s) = (mean[g], inv_std[g]);
        for (v, o) in chunk.iter().zip(out) {
            *o = (*v - m) * s;
        }
    }
    GroupStats { inv_std, xhat }
}

/// Backward through per-group standardization:
/// `dx = inv_std/N * (N*dy - sum(dy) - xhat * sum(dy*xhat))`
/// where `dy` is the gradient after the affine scale has been applied.
fn standardize_backward<T: Element>(
    dy_scaled: &[T],
    stats: &GroupStats<T>,
    group_of: impl Fn(usize) -> usize + Copy,
    n_groups: usize,
    counts: &[usize],
    run: usize,
) -> Vec<T> {
    let mut sum_dy = vec![T::ZERO; n_groups];
    let mut sum_dy_xhat = vec![T::ZERO; n_groups];
    for (ri, (chunk, xh)) in dy_scaled
        .chunks_exact(run)
        .zip(stats.xhat.chunks_exact(run))
        .enumerate()
    {
        let g = group_of(ri * run);
        let (mut a, mut b) = (T::ZERO, T::ZERO);
        for (d, x) in chunk.iter().zip(xh) {
            a += *d;
            b += *d * *x;
        }
        sum_dy[g] += a;
        sum_dy_xhat[g] += b;
    }
    let mut dx = vec![T::ZERO; dy_scaled.len()];
    for (ri, ((chunk, xh), out)) in dy_scaled
        .chunks_exact(run)
        .zip(stats.xhat.chunks_exact(run))
        .zip(dx.chunks_exact_mut(run))
        .enumerate()
    {
        let g = group_of(ri * run);
        let n = T::from_f64(counts[g] as f64);
        let (inv, sdy, sdx) = (stats.inv_std[g], sum_dy[g], sum_dy_xhat[g]);
        for ((d, x), o) in chunk.iter().zip(xh).zip(out) {
            *o = inv / n * (n * *d - sdy - *x * sdx);
        }
    }
    dx
}

/// Small random shift init for the 2D norms. A zero shift would park the
/// following ReLU exactly on its kink wherever a normalized group is
/// degenerate (single-sample statistics), killing gradient flow there.
fn init_beta<T: Element>(channels: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let data = (0..channels)
        .map(|_| T::from_f64(rng.gen_range(-0.1..0.1)))
        .collect();
    Tensor::from_vec(&[channels], data).with_grad()
}

/// Channel-wise batch normalization over `[b, c, h, w]`.
pub struct BatchNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    cache: Option<(Vec<usize>, GroupStats<T>)>,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gamma: Tensor::from_vec(&[channels], vec![T::ONE; channels]).with_grad(),
            beta: init_beta(channels, rng),
            cache: None,
        }
    }
}

impl<T: Element> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().expect("norm input is 4d");
        let plane = h * w;
        let group_of = |i: usize| (i / plane) % c;
        let counts = vec![b * plane; c];
        let stats = normalize_groups(x.data(), group_of, c, &counts, plane);
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = Tensor::zeros(x.shape());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let ch = group_of(i);
            *o = gd[ch] * stats.xhat[i] + bd[ch];
        }
        self.cache = Some((x.shape().to_vec(), stats));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (shape, stats) = self.cache.take().expect("forward before backward");
        let [b, c, h, w]: [usize; 4] = shape.as_slice().try_into().unwrap();
        let plane = h * w;
        let group_of = |i: usize| (i / plane) % c;
        let counts = vec![b * plane; c];
        let gd = grad_out.data();
        {
            let gg = self.gamma.grad_mut();
            for (i, d) in gd.iter().enumerate() {
                gg[group_of(i)] += *d * stats.xhat[i];
            }
        }
        {
            let bg = self.beta.grad_mut();
            for (i, d) in gd.iter().enumerate() {
                bg[group_of(i)] += *d;
            }
        }
        let gamma = self.gamma.data();
        let dy_scaled: Vec<T> = gd
            .iter()
            .enumerate()
            .map(|(i, d)| *d * gamma[group_of(i)])
            .collect();
        let dx = standardize_backward(&dy_scaled, &stats, group_of, c, &counts, plane);
        Tensor::from_vec(&shape, dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Per-(batch, channel) instance normalization over `[b, c, h, w]` with
/// channel-wise affine parameters.
pub struct InstanceNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    cache: Option<(Vec<usize>, GroupStats<T>)>,
}

impl<T: Element> InstanceNorm2d<T> {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gamma: Tensor::from_vec(&[channels], vec![T::ONE; channels]).with_grad(),
            beta: init_beta(channels, rng),
            cache: None,
        }
    }
}

impl<T: Element> Layer<T> for InstanceNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, c, h, w]: [usize; 4] = x.shape().try_into().expect("norm input is 4d");
        let plane = h * w;
        let group_of = |i: usize| i / plane;
        let counts = vec![plane; b * c];
        let stats = normalize_groups(x.data(), group_of, b * c, &counts, plane);
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = Tensor::zeros(x.shape());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *o = gd[ch] * stats.xhat[i] + bd[ch];
        }
        self.cache = Some((x.shape().to_vec(), stats));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (shape, stats) = self.cache.take().expect("forward before backward");
        let [b, c, h, w]: [usize; 4] = shape.as_slice().try_into().unwrap();
        let plane = h * w;
        let group_of = |i: usize| i / plane;
        let counts = vec![plane; b * c];
        let gd = grad_out.data();
        {
            let gg = self.gamma.grad_mut();
            for (i, d) in gd.iter().enumerate() {
                gg[(i / plane) % c] += *d * stats.xhat[i];
            }
        }
        {
            let bg = self.beta.grad_mut();
            for (i, d) in gd.iter().enumerate() {
                bg[(i / plane) % c] += *d;
            }
        }
        let gamma = self.gamma.data();
        let dy_scaled: Vec<T> = gd
            .iter()
            .enumerate()
            .map(|(i, d)| *d * gamma[(i / plane) % c])
            .collect();
        let dx = standardize_backward(&dy_scaled, &stats, group_of, b * c, &counts, plane);
        Tensor::from_vec(&shape, dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Either 2D norm behind one name, chosen per stage by the model config.
pub enum Norm2d<T: Element> {
    Batch(BatchNorm2d<T>),
    Instance(InstanceNorm2d<T>),
}

impl<T: Element> Norm2d<T> {
    pub fn new(kind: NormKind, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            NormKind::Batch => Norm2d::Batch(BatchNorm2d::new(channels, rng)),
            NormKind::Instance => Norm2d::Instance(InstanceNorm2d::new(channels, rng)),
        }
    }
}

impl<T: Element> Layer<T> for Norm2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Norm2d::Batch(n) => n.forward(x),
            Norm2d::Instance(n) => n.forward(x),
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        match self {
            Norm2d::Batch(n) => n.backward(grad_out),
            Norm2d::Instance(n) => n.backward(grad_out),
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Norm2d::Batch(n) => n.visit_params(prefix, f),
            Norm2d::Instance(n) => n.visit_params(prefix, f),
        }
    }
}

/// Token-wise layer normalization over the last axis of `[b, s, d]`.
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    cache: Option<(Vec<usize>, GroupStats<T>)>,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::from_vec(&[dim], vec![T::ONE; dim]).with_grad(),
            beta: Tensor::zeros(&[dim]).with_grad(),
            cache: None,
        }
    }
}

impl<T: Element> Layer<T> for LayerNorm<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, s, d]: [usize; 3] = x.shape().try_into().expect("layernorm input is 3d");
        let group_of = |i: usize| i / d;
        let counts = vec![d; b * s];
        let stats = normalize_groups(x.data(), group_of, b * s, &counts, d);
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = Tensor::zeros(x.shape());
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            let k = i % d;
            *o = gd[k] * stats.xhat[i] + bd[k];
        }
        self.cache = Some((x.shape().to_vec(), stats));
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (shape, stats) = self.cache.take().expect("forward before backward");
        let [b, s, d]: [usize; 3] = shape.as_slice().try_into().unwrap();
        let group_of = |i: usize| i / d;
        let counts = vec![d; b * s];
        let gd = grad_out.data();
        {
            let gg = self.gamma.grad_mut();
            for (i, dv) in gd.iter().enumerate() {
                gg[i % d] += *dv * stats.xhat[i];
            }
        }
        {
            let bg = self.beta.grad_mut();
            for (i, dv) in gd.iter().enumerate() {
                bg[i % d] += *dv;
            }
        }
        let gamma = self.gamma.data();
        let dy_scaled: Vec<T> = gd
            .iter()
            .enumerate()
            .map(|(i, dv)| *dv * gamma[i % d])
            .collect();
        let dx = standardize_backward(&dy_scaled, &stats, group_of, b * s, &counts, d);
        Tensor::from_vec(&shape, dx)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}
