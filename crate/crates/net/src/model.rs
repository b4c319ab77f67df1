//! The hybrid network: a convolutional encoder-decoder with skip
//! connections and a stack of self-attention blocks at the bottleneck.
//!
//! Stages (channel counts scale with the width factor, base widths 64, 128,
//! 256, 512, 512): an input double-conv with batch norm; four downsamplings
//! (2x2 max pool, then double-conv with instance norm); the attention
//! blocks over the H/16 x W/16 token grid; four upsamplings (2x bilinear,
//! skip concatenation, double-conv with batch norm); a 1x1 conv to 3
//! channels; and a final L2 normalization to unit vectors.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{
    AttentionBlock, BilinearUp2, Conv2d, Layer, MaxPool2, Norm2d, NormKind, Relu, UnitNormalize,
};
use crate::scalar::Element;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("embed dim {0} is not divisible by {1} heads")]
    IndivisibleHeads(usize, usize),
    #[error("width factor {0} must be in (0, 1]")]
    BadWidth(f64),
    #[error("input spatial dims {0}x{1} must be divisible by 16")]
    BadSpatialDims(usize, usize),
    #[error("expected {0} input channels, got {1}")]
    ChannelMismatch(usize, usize),
    #[error("attention blocks {0} out of supported range (<= 12)")]
    TooManyBlocks(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub width_factor: f64,
    pub attention_blocks: usize,
    pub heads: usize,
    pub in_channels: usize,
    pub input_norm: NormKind,
    pub encoder_norm: NormKind,
    pub decoder_norm: NormKind,
}

impl ModelConfig {
    /// Desk-scale defaults: one-eighth width, the full 8-block bottleneck.
    pub fn toy(in_channels: usize) -> Self {
        Self {
            width_factor: 1.0 / 8.0,
            attention_blocks: 8,
            heads: 8,
            in_channels,
            input_norm: NormKind::Batch,
            encoder_norm: NormKind::Instance,
            decoder_norm: NormKind::Batch,
        }
    }

    fn ch(&self, base: usize) -> usize {
        ((base as f64 * self.width_factor).round() as usize).max(1)
    }

    /// Bottleneck embedding width.
    pub fn embed_dim(&self) -> usize {
        self.ch(512)
    }

    /// Eight heads unless the scaled embedding is narrower than that.
    pub fn effective_heads(&self) -> usize {
        self.heads.min(self.embed_dim())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.width_factor > 0.0 && self.width_factor <= 1.0) {
            return Err(ModelError::BadWidth(self.width_factor));
        }
        if self.attention_blocks > 12 {
            return Err(ModelError::TooManyBlocks(self.attention_blocks));
        }
        let dim = self.embed_dim();
        let heads = self.effective_heads();
        if heads == 0 || dim % heads != 0 {
            return Err(ModelError::IndivisibleHeads(dim, heads));
        }
        Ok(())
    }
}

struct ConvBlock<T: Element> {
    conv: Conv2d<T>,
    norm: Norm2d<T>,
    act: Relu<T>,
}

impl<T: Element> ConvBlock<T> {
    fn new(cin: usize, cout: usize, kind: NormKind, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, 3, 1, rng),
            norm: Norm2d::new(kind, cout, rng),
            act: Relu::new(),
        }
    }
}

impl<T: Element> Layer<T> for ConvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let c = self.conv.forward(x);
        let n = self.norm.forward(&c);
        self.act.forward(&n)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let ga = self.act.backward(grad_out);
        let gn = self.norm.backward(&ga);
        self.conv.backward(&gn)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.conv.visit_params(&format!("{prefix}.conv"), f);
        self.norm.visit_params(&format!("{prefix}.norm"), f);
    }
}

/// `[b, c, h, w]` to `[b, h*w, c]` tokens.
fn to_tokens<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w]: [usize; 4] = x.shape().try_into().unwrap();
    let mut out = Tensor::zeros(&[b, h * w, c]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for s in 0..h * w {
                od[(bi * h * w + s) * c + ci] = xd[(bi * c + ci) * h * w + s];
            }
        }
    }
    out
}

/// Inverse of [`to_tokens`].
fn from_tokens<T: Element>(t: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [b, s, c]: [usize; 3] = t.shape().try_into().unwrap();
    assert_eq!(s, h * w);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let td = t.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for si in 0..s {
                od[(bi * c + ci) * s + si] = td[(bi * s + si) * c + ci];
            }
        }
    }
    out
}

fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [ba, ca, h, w]: [usize; 4] = a.shape().try_into().unwrap();
    let [bb, cb, hb, wb]: [usize; 4] = b.shape().try_into().unwrap();
    assert!(ba == bb && h == hb && w == wb);
    let mut out = Tensor::zeros(&[ba, ca + cb, h, w]);
    let plane = h * w;
    let od = out.data_mut();
    for bi in 0..ba {
        let dst = &mut od[bi * (ca + cb) * plane..(bi + 1) * (ca + cb) * plane];
        dst[..ca * plane].copy_from_slice(&a.data()[bi * ca * plane..(bi + 1) * ca * plane]);
        dst[ca * plane..].copy_from_slice(&b.data()[bi * cb * plane..(bi + 1) * cb * plane]);
    }
    out
}

fn split_channels<T: Element>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [b, c, h, w]: [usize; 4] = g.shape().try_into().unwrap();
    let cb = c - ca;
    let plane = h * w;
    let mut ga = Tensor::zeros(&[b, ca, h, w]);
    let mut gb = Tensor::zeros(&[b, cb, h, w]);
    for bi in 0..b {
        let src = &g.data()[bi * c * plane..(bi + 1) * c * plane];
        ga.data_mut()[bi * ca * plane..(bi + 1) * ca * plane]
            .copy_from_slice(&src[..ca * plane]);
        gb.data_mut()[bi * cb * plane..(bi + 1) * cb * plane]
            .copy_from_slice(&src[ca * plane..]);
    }
    (ga, gb)
}

fn add_into<T: Element>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += *s;
    }
}

pub struct Model<T: Element> {
    pub config: ModelConfig,
    enc0a: ConvBlock<T>,
    enc0b: ConvBlock<T>,
    pools: [MaxPool2<T>; 4],
    enc1a: ConvBlock<T>,
    enc1b: ConvBlock<T>,
    enc2a: ConvBlock<T>,
    enc2b: ConvBlock<T>,
    enc3a: ConvBlock<T>,
    enc3b: ConvBlock<T>,
    enc4a: ConvBlock<T>,
    enc4b: ConvBlock<T>,
    blocks: Vec<AttentionBlock<T>>,
    ups: [BilinearUp2<T>; 4],
    dec1a: ConvBlock<T>,
    dec1b: ConvBlock<T>,
    dec2a: ConvBlock<T>,
    dec2b: ConvBlock<T>,
    dec3a: ConvBlock<T>,
    dec3b: ConvBlock<T>,
    dec4a: ConvBlock<T>,
    dec4b: ConvBlock<T>,
    out_conv: Conv2d<T>,
    out_norm: UnitNormalize<T>,
    bottleneck_hw: Option<(usize, usize)>,
}

impl<T: Element> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rng = &mut rng;
        let (c0, c1, c2, c3, c4) = (
            config.ch(64),
            config.ch(128),
            config.ch(256),
            config.ch(512),
            config.ch(512),
        );
        let hidden = config.ch(2048);
        let heads = config.effective_heads();
        let blocks = (0..config.attention_blocks)
            .map(|_| AttentionBlock::new(c4, heads, hidden, rng))
            .collect();
        Ok(Self {
            enc0a: ConvBlock::new(config.in_channels, c0, config.input_norm, rng),
            enc0b: ConvBlock::new(c0, c0, config.input_norm, rng),
            pools: [
                MaxPool2::new(),
                MaxPool2::new(),
                MaxPool2::new(),
                MaxPool2::new(),
            ],
            enc1a: ConvBlock::new(c0, c1, config.encoder_norm, rng),
            enc1b: ConvBlock::new(c1, c1, config.encoder_norm, rng),
            enc2a: ConvBlock::new(c1, c2, config.encoder_norm, rng),
            enc2b: ConvBlock::new(c2, c2, config.encoder_norm, rng),
            enc3a: ConvBlock::new(c2, c3, config.encoder_norm, rng),
            enc3b: ConvBlock::new(c3, c3, config.encoder_norm, rng),
            enc4a: ConvBlock::new(c3, c4, config.encoder_norm, rng),
            enc4b: ConvBlock::new(c4, c4, config.encoder_norm, rng),
            blocks,
            ups: [
                BilinearUp2::new(),
                BilinearUp2::new(),
                BilinearUp2::new(),
                BilinearUp2::new(),
            ],
            dec1a: ConvBlock::new(c4 + c3, c3, config.decoder_norm, rng),
            dec1b: ConvBlock::new(c3, c2, config.decoder_norm, rng),
            dec2a: ConvBlock::new(c2 + c2, c2, config.decoder_norm, rng),
            dec2b: ConvBlock::new(c2, c1, config.decoder_norm, rng),
            dec3a: ConvBlock::new(c1 + c1, c1, config.decoder_norm, rng),
            dec3b: ConvBlock::new(c1, c0, config.decoder_norm, rng),
            dec4a: ConvBlock::new(c0 + c0, c0, config.decoder_norm, rng),
            dec4b: ConvBlock::new(c0, c0, config.decoder_norm, rng),
            out_conv: Conv2d::new(c0, 3, 1, 0, rng),
            out_norm: UnitNormalize::new(),
            bottleneck_hw: None,
            config,
        })
    }

    /// Forward pass; output spatial dims equal the input's, 3 channels of
    /// unit vectors.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let [_, c, h, w]: [usize; 4] = x
            .shape()
            .try_into()
            .map_err(|_| ModelError::BadSpatialDims(0, 0))?;
        if c != self.config.in_channels {
            return Err(ModelError::ChannelMismatch(self.config.in_channels, c));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(ModelError::BadSpatialDims(h, w));
        }
        let s0 = self.enc0b.forward(&self.enc0a.forward(x));
        let p1 = self.pools[0].forward(&s0);
        let s1 = self.enc1b.forward(&self.enc1a.forward(&p1));
        let p2 = self.pools[1].forward(&s1);
        let s2 = self.enc2b.forward(&self.enc2a.forward(&p2));
        let p3 = self.pools[2].forward(&s2);
        let s3 = self.enc3b.forward(&self.enc3a.forward(&p3));
        let p4 = self.pools[3].forward(&s3);
        let e4 = self.enc4b.forward(&self.enc4a.forward(&p4));

        let (bh, bw) = (h / 16, w / 16);
        self.bottleneck_hw = Some((bh, bw));
        let mut t = to_tokens(&e4);
        for blk in &mut self.blocks {
            t = blk.forward(&t);
        }
        let a4 = from_tokens(&t, bh, bw);

        let u1 = self.ups[0].forward(&a4);
        let d1 = self
            .dec1b
            .forward(&self.dec1a.forward(&concat_channels(&u1, &s3)));
        let u2 = self.ups[1].forward(&d1);
        let d2 = self
            .dec2b
            .forward(&self.dec2a.forward(&concat_channels(&u2, &s2)));
        let u3 = self.ups[2].forward(&d2);
        let d3 = self
            .dec3b
            .forward(&self.dec3a.forward(&concat_channels(&u3, &s1)));
        let u4 = self.ups[3].forward(&d3);
        let d4 = self
            .dec4b
            .forward(&self.dec4a.forward(&concat_channels(&u4, &s0)));
        let o = self.out_conv.forward(&d4);
        Ok(self.out_norm.forward(&o))
    }

    /// Reverse-mode pass; accumulates parameter gradients and returns the
    /// gradient with respect to the input.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let (bh, bw) = self.bottleneck_hw.expect("forward before backward");
        let c0 = self.config.ch(64);
        let c1 = self.config.ch(128);
        let c2 = self.config.ch(256);
        let c4 = self.config.ch(512);

        let g = self.out_norm.backward(grad_out);
        let g = self.out_conv.backward(&g);
        let g = self.dec4a.backward(&self.dec4b.backward(&g));
        let (gu4, gs0) = split_channels(&g, c0);
        let g = self.ups[3].backward(&gu4);
        let g = self.dec3a.backward(&self.dec3b.backward(&g));
        let (gu3, gs1) = split_channels(&g, c1);
        let g = self.ups[2].backward(&gu3);
        let g = self.dec2a.backward(&self.dec2b.backward(&g));
        let (gu2, gs2) = split_channels(&g, c2);
        let g = self.ups[1].backward(&gu2);
        let g = self.dec1a.backward(&self.dec1b.backward(&g));
        let (gu1, gs3) = split_channels(&g, c4);
        let ga4 = self.ups[0].backward(&gu1);

        let mut gt = to_tokens(&ga4);
        for blk in self.blocks.iter_mut().rev() {
            gt = blk.backward(&gt);
        }
        let ge4 = from_tokens(&gt, bh, bw);

        let g = self.enc4a.backward(&self.enc4b.backward(&ge4));
        let mut g = self.pools[3].backward(&g);
        add_into(&mut g, &gs3);
        let g = self.enc3a.backward(&self.enc3b.backward(&g));
        let mut g = self.pools[2].backward(&g);
        add_into(&mut g, &gs2);
        let g = self.enc2a.backward(&self.enc2b.backward(&g));
        let mut g = self.pools[1].backward(&g);
        add_into(&mut g, &gs1);
        let g = self.enc1a.backward(&self.enc1b.backward(&g));
        let mut g = self.pools[0].backward(&g);
        add_into(&mut g, &gs0);
        self.enc0a.backward(&self.enc0b.backward(&g))
    }

    /// Visit every parameter tensor in a deterministic order with a
    /// hierarchical name.
    pub fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.enc0a.visit_params("enc0a", f);
        self.enc0b.visit_params("enc0b", f);
        self.enc1a.visit_params("enc1a", f);
        self.enc1b.visit_params("enc1b", f);
        self.enc2a.visit_params("enc2a", f);
        self.enc2b.visit_params("enc2b", f);
        self.enc3a.visit_params("enc3a", f);
        self.enc3b.visit_params("enc3b", f);
        self.enc4a.visit_params("enc4a", f);
        self.enc4b.visit_params("enc4b", f);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            blk.visit_params(&format!("block{i}"), f);
        }
        self.dec1a.visit_params("dec1a", f);
        self.dec1b.visit_params("dec1b", f);
        self.dec2a.visit_params("dec2a", f);
        self.dec2b.visit_params("dec2b", f);
        self.dec3a.visit_params("dec3a", f);
        self.dec3b.visit_params("dec3b", f);
        self.dec4a.visit_params("dec4a", f);
        self.dec4b.visit_params("dec4b", f);
        self.out_conv.visit_params("out_conv", f);
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |_, p| p.zero_grad());
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, p| n += p.numel());
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::toy(11);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.embed_dim(), 64);
        assert_eq!(cfg.effective_heads(), 8);
        cfg.width_factor = 0.0;
        assert!(matches!(cfg.validate(), Err(ModelError::BadWidth(_))));
        cfg.width_factor = 1.0 / 8.0;
        cfg.heads = 7;
        assert!(matches!(
            cfg.validate(),
            Err(ModelError::IndivisibleHeads(64, 7))
        ));
        // Very narrow model: heads shrink with the embedding.
        let mut tiny = ModelConfig::toy(4);
        tiny.width_factor = 1.0 / 128.0;
        assert_eq!(tiny.embed_dim(), 4);
        assert_eq!(tiny.effective_heads(), 4);
        assert!(tiny.validate().is_ok());
    }

    #[test]
    fn bottleneck_shape_arithmetic() {
        // Full width at 512x512 gives a 32x32x512 bottleneck; w=1/8 at
        // 64x64 gives 4x4x64.
        let full = ModelConfig {
            width_factor: 1.0,
            ..ModelConfig::toy(11)
        };
        assert_eq!(full.embed_dim(), 512);
        assert_eq!(512 / 16, 32);
        let toy = ModelConfig::toy(11);
        assert_eq!(toy.embed_dim(), 64);
        assert_eq!(64 / 16, 4);
    }

    #[test]
    fn forward_shapes_and_unit_norm() {
        let mut cfg = ModelConfig::toy(11);
        cfg.width_factor = 1.0 / 16.0;
        cfg.attention_blocks = 1;
        let mut model = Model::<f32>::new(cfg, 7).unwrap();
        let n = 2 * 11 * 32 * 32;
        let data: Vec<f32> = (0..n).map(|i| ((i % 13) as f32 - 6.0) / 7.0).collect();
        let x = Tensor::from_vec(&[2, 11, 32, 32], data);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 32, 32]);
        for bi in 0..2 {
            for yy in 0..32 {
                for xx in 0..32 {
                    let mut sq = 0.0f32;
                    for c in 0..3 {
                        let v = y.data()[((bi * 3 + c) * 32 + yy) * 32 + xx];
                        sq += v * v;
                    }
                    assert!((sq.sqrt() - 1.0).abs() < 1e-5, "norm {}", sq.sqrt());
                }
            }
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let mut cfg = ModelConfig::toy(4);
        cfg.width_factor = 1.0 / 16.0;
        cfg.attention_blocks = 0;
        let mut model = Model::<f32>::new(cfg, 1).unwrap();
        let x = Tensor::zeros(&[1, 4, 24, 24]);
        assert!(matches!(
            model.forward(&x),
            Err(ModelError::BadSpatialDims(24, 24))
        ));
        let x = Tensor::zeros(&[1, 5, 32, 32]);
        assert!(matches!(
            model.forward(&x),
            Err(ModelError::ChannelMismatch(4, 5))
        ));
    }

    #[test]
    fn zero_output_conv_still_finite() {
        let mut cfg = ModelConfig::toy(4);
        cfg.width_factor = 1.0 / 16.0;
        cfg.attention_blocks = 0;
        let mut model = Model::<f32>::new(cfg, 3).unwrap();
        model.out_conv.weight.data_mut().fill(0.0);
        model.out_conv.bias.data_mut().fill(0.0);
        let x = Tensor::from_vec(&[1, 4, 16, 16], vec![0.5; 4 * 256]);
        let y = model.forward(&x).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn attention_keeps_token_shape() {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut blk = AttentionBlock::<f64>::new(64, 8, 256, &mut rng);
        let data: Vec<f64> = (0..16 * 64).map(|i| ((i % 31) as f64 - 15.0) / 16.0).collect();
        let x = Tensor::from_vec(&[1, 16, 64], data);
        let y = blk.forward(&x);
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn attention_is_permutation_equivariant_without_positional_signal() {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut blk = AttentionBlock::<f64>::new(16, 4, 32, &mut rng);
        let s = 6;
        let data: Vec<f64> = (0..s * 16).map(|i| ((i * 7 % 23) as f64 - 11.0) / 9.0).collect();
        let x = Tensor::from_vec(&[1, s, 16], data.clone());
        let y = blk.forward(&x);
        // Permute tokens, run again, unpermute: identical output.
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut pdata = vec![0.0; s * 16];
        for (to, &from) in perm.iter().enumerate() {
            pdata[to * 16..(to + 1) * 16].copy_from_slice(&data[from * 16..(from + 1) * 16]);
        }
        let xp = Tensor::from_vec(&[1, s, 16], pdata);
        let yp = blk.forward(&xp);
        for (to, &from) in perm.iter().enumerate() {
            for d in 0..16 {
                let a = y.data()[from * 16 + d];
                let b = yp.data()[to * 16 + d];
                assert!((a - b).abs() < 1e-12, "token {from}->{to} dim {d}");
            }
        }
    }

    #[test]
    fn viewing_channels_break_permutation_equivariance() {
        // With viewing-encoding features tied to positions (they do not
        // move when the content permutes), the permutation relation of the
        // previous test no longer holds: position has entered the tokens.
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut blk = AttentionBlock::<f64>::new(16, 4, 32, &mut rng);
        let s = 6;
        // Channels 0..12 carry content, 12..16 carry the per-position
        // viewing encoding.
        let content: Vec<f64> = (0..s * 12).map(|i| ((i * 7 % 23) as f64 - 11.0) / 9.0).collect();
        let viewing = |pos: usize, d: usize| 0.3 * (pos as f64 + 1.0) * (d as f64 + 1.0) / 10.0;
        let build = |content: &[f64]| {
            let mut data = vec![0.0; s * 16];
            for pos in 0..s {
                data[pos * 16..pos * 16 + 12]
                    .copy_from_slice(&content[pos * 12..(pos + 1) * 12]);
                for d in 0..4 {
                    data[pos * 16 + 12 + d] = viewing(pos, d);
                }
            }
            Tensor::from_vec(&[1, s, 16], data)
        };
        let y = blk.forward(&build(&content));
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut pcontent = vec![0.0; s * 12];
        for (to, &from) in perm.iter().enumerate() {
            pcontent[to * 12..(to + 1) * 12].copy_from_slice(&content[from * 12..(from + 1) * 12]);
        }
        let yp = blk.forward(&build(&pcontent));
        let mut max_dev = 0.0_f64;
        for (to, &from) in perm.iter().enumerate() {
            for d in 0..16 {
                max_dev = max_dev.max((y.data()[from * 16 + d] - yp.data()[to * 16 + d]).abs());
            }
        }
        assert!(max_dev > 1e-3, "outputs still permutation-related: {max_dev}");
    }
}
