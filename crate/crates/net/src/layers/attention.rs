//! Multi-head self-attention over flattened bottleneck tokens, and the
//! pre-norm transformer block wrapping it. No positional embedding is added:
//! position enters through the viewing-encoding input channels, so without
//! them the block is permutation-equivariant over tokens.

use rand_chacha::ChaCha8Rng;

use super::{LayerNorm, Linear, Relu};
use super::Layer;
use crate::scalar::Element;
use crate::tensor::Tensor;

pub struct MultiHeadAttention<T: Element> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    heads: usize,
    cache: Option<AttnCache<T>>,
}

struct AttnCache<T: Element> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// Softmax probabilities, `[b, heads, s, s]` flattened.
    probs: Vec<T>,
}

impl<T: Element> MultiHeadAttention<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "dim must divide into heads");
        Self {
            wq: Linear::new(dim, dim, rng),
            wk: Linear::new(dim, dim, rng),
            wv: Linear::new(dim, dim, rng),
            wo: Linear::new(dim, dim, rng),
            heads,
            cache: None,
        }
    }
}

impl<T: Element> Layer<T> for MultiHeadAttention<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, s, d]: [usize; 3] = x.shape().try_into().expect("attention input is 3d");
        let h = self.heads;
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);

        let mut probs = vec![T::ZERO; b * h * s * s];
        let mut concat = Tensor::zeros(&[b, s, d]);
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let cd = concat.data_mut();
        for bi in 0..b {
            for hi in 0..h {
                let off = hi * dh;
                let pbase = (bi * h + hi) * s * s;
                for i in 0..s {
                    let qrow = &qd[(bi * s + i) * d + off..(bi * s + i) * d + off + dh];
                    // Scores with a running max for a stable softmax.
                    let mut row = vec![T::ZERO; s];
                    let mut max = T::from_f64(f64::NEG_INFINITY);
                    for (j, r) in row.iter_mut().enumerate() {
                        let krow = &kd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        let mut acc = T::ZERO;
                        for (a, c) in qrow.iter().zip(krow) {
                            acc += *a * *c;
                        }
                        *r = acc * scale;
                        max = max.maximum(*r);
                    }
                    let mut denom = T::ZERO;
                    for r in row.iter_mut() {
                        *r = T::from_f64((r.to_f64() - max.to_f64()).exp());
                        denom += *r;
                    }
                    let prow = &mut probs[pbase + i * s..pbase + (i + 1) * s];
                    for (p, r) in prow.iter_mut().zip(&row) {
                        *p = *r / denom;
                    }
                    let orow = &mut cd[(bi * s + i) * d + off..(bi * s + i) * d + off + dh];
                    for (j, p) in prow.iter().enumerate() {
                        let vrow = &vd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        for (o, vv) in orow.iter_mut().zip(vrow) {
                            *o += *p * *vv;
                        }
                    }
                }
            }
        }
        let out = self.wo.forward(&concat);
        self.cache = Some(AttnCache { q, k, v, probs });
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("forward before backward");
        let [b, s, d]: [usize; 3] = cache.q.shape().try_into().unwrap();
        let h = self.heads;
        let dh = d / h;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());

        let d_concat = self.wo.backward(grad_out);
        let mut dq = Tensor::zeros(&[b, s, d]);
        let mut dk = Tensor::zeros(&[b, s, d]);
        let mut dv = Tensor::zeros(&[b, s, d]);
        let (qd, kd, vd) = (cache.q.data(), cache.k.data(), cache.v.data());
        let dcd = d_concat.data();
        let (dqd, dkd, dvd) = (dq.data_mut(), dk.data_mut(), dv.data_mut());

        for bi in 0..b {
            for hi in 0..h {
                let off = hi * dh;
                let pbase = (bi * h + hi) * s * s;
                for i in 0..s {
                    let dorow = &dcd[(bi * s + i) * d + off..(bi * s + i) * d + off + dh];
                    let prow = &cache.probs[pbase + i * s..pbase + (i + 1) * s];
                    // dP[j] = dO . V_j ; dV_j += P[j] * dO
                    let mut dp = vec![T::ZERO; s];
                    for (j, dpj) in dp.iter_mut().enumerate() {
                        let vrow = &vd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        let mut acc = T::ZERO;
                        for (a, c) in dorow.iter().zip(vrow) {
                            acc += *a * *c;
                        }
                        *dpj = acc;
                        let dvrow = &mut dvd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        for (dvv, dov) in dvrow.iter_mut().zip(dorow) {
                            *dvv += prow[j] * *dov;
                        }
                    }
                    // Softmax backward: ds = (dp - sum(dp * p)) * p
                    let mut dot = T::ZERO;
                    for (dpj, pj) in dp.iter().zip(prow) {
                        dot += *dpj * *pj;
                    }
                    for (j, pj) in prow.iter().enumerate() {
                        let ds = (dp[j] - dot) * *pj * scale;
                        let krow = &kd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        let qrow = &qd[(bi * s + i) * d + off..(bi * s + i) * d + off + dh];
                        let dqrow = &mut dqd[(bi * s + i) * d + off..(bi * s + i) * d + off + dh];
                        for (dqv, kv) in dqrow.iter_mut().zip(krow) {
                            *dqv += ds * *kv;
                        }
                        let dkrow = &mut dkd[(bi * s + j) * d + off..(bi * s + j) * d + off + dh];
                        for (dkv, qv) in dkrow.iter_mut().zip(qrow) {
                            *dkv += ds * *qv;
                        }
                    }
                }
            }
        }

        let mut grad_in = self.wq.backward(&dq);
        let gk = self.wk.backward(&dk);
        let gv = self.wv.backward(&dv);
        for ((gi, a), b) in grad_in.data_mut().iter_mut().zip(gk.data()).zip(gv.data()) {
            *gi += *a + *b;
        }
        grad_in
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.wq.visit_params(&format!("{prefix}.wq"), f);
        self.wk.visit_params(&format!("{prefix}.wk"), f);
        self.wv.visit_params(&format!("{prefix}.wv"), f);
        self.wo.visit_params(&format!("{prefix}.wo"), f);
    }
}

/// Two-layer feed-forward with a ReLU hidden activation.
pub struct Mlp<T: Element> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    act: Relu<T>,
}

impl<T: Element> Mlp<T> {
    pub fn new(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
            act: Relu::new(),
        }
    }
}

impl<T: Element> Layer<T> for Mlp<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let h = self.fc1.forward(x);
        let a = self.act.forward(&h);
        self.fc2.forward(&a)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let da = self.fc2.backward(grad_out);
        let dh = self.act.backward(&da);
        self.fc1.backward(&dh)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc1.visit_params(&format!("{prefix}.fc1"), f);
        self.fc2.visit_params(&format!("{prefix}.fc2"), f);
    }
}

/// Pre-norm block: `x + MHA(LN(x))`, then `y + MLP(LN(y))`.
pub struct AttentionBlock<T: Element> {
    pub ln1: LayerNorm<T>,
    pub mha: MultiHeadAttention<T>,
    pub ln2: LayerNorm<T>,
    pub mlp: Mlp<T>,
}

impl<T: Element> AttentionBlock<T> {
    pub fn new(dim: usize, heads: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            mha: MultiHeadAttention::new(dim, heads, rng),
            ln2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, hidden, rng),
        }
    }
}

impl<T: Element> Layer<T> for AttentionBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n1 = self.ln1.forward(x);
        let a = self.mha.forward(&n1);
        let mut x2 = x.clone();
        for (o, av) in x2.data_mut().iter_mut().zip(a.data()) {
            *o += *av;
        }
        let n2 = self.ln2.forward(&x2);
        let m = self.mlp.forward(&n2);
        let mut y = x2;
        for (o, mv) in y.data_mut().iter_mut().zip(m.data()) {
            *o += *mv;
        }
        y
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        // y = x2 + MLP(LN2(x2))
        let dm = self.mlp.backward(grad_out);
        let dn2 = self.ln2.backward(&dm);
        let mut dx2 = grad_out.clone();
        for (g, a) in dx2.data_mut().iter_mut().zip(dn2.data()) {
            *g += *a;
        }
        // x2 = x + MHA(LN1(x))
        let da = self.mha.backward(&dx2);
        let dn1 = self.ln1.backward(&da);
        let mut dx = dx2;
        for (g, a) in dx.data_mut().iter_mut().zip(dn1.data()) {
            *g += *a;
        }
        dx
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.ln1.visit_params(&format!("{prefix}.ln1"), f);
        self.mha.visit_params(&format!("{prefix}.mha"), f);
        self.ln2.visit_params(&format!("{prefix}.ln2"), f);
        self.mlp.visit_params(&format!("{prefix}.mlp"), f);
    }
}
