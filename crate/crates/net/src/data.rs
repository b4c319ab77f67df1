//! Training samples: network input tensors assembled from polarization
//! measurements plus a viewing encoding, paired with ground-truth normals.

use polarsfp_core::polar::{
    build_representation, decompose, PolarError, PolarizerStack, RepresentationVariant,
    DEFAULT_RHO_MIN,
};
use polarsfp_core::solver::NormalMap;
use polarsfp_core::viewing::ViewingEncoding;

use crate::scalar::Element;
use crate::tensor::{idx4, Tensor};

/// One training pair. `input` is `[c, h, w]`, `target` is `[3, h, w]` with
/// zeros at invalid pixels, `valid` is row-major `[h, w]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub valid: Vec<bool>,
}

/// Stack the raw polarizer images, the chosen polarization representation,
/// and an optional viewing encoding into the network input. The default
/// layout is 4 raw + 4 encoded + 3 ray-direction channels = 11.
pub fn assemble_input(
    stack: &PolarizerStack,
    variant: RepresentationVariant,
    viewing: Option<&ViewingEncoding>,
) -> Result<Tensor<f32>, PolarError> {
    let stokes = decompose(stack, DEFAULT_RHO_MIN);
    let rep = build_representation(&stokes, stack, variant, None)?;
    let (w, h) = (stack.width(), stack.height());
    let mut channels: Vec<&polarsfp_core::FloatMap> = Vec::new();
    channels.extend(stack.images().iter());
    channels.extend(rep.channels.iter());
    if let Some(enc) = viewing {
        assert_eq!(enc.width(), w, "viewing encoding size mismatch");
        assert_eq!(enc.height(), h);
        channels.extend(enc.channels.iter());
    }
    let c = channels.len();
    let mut out = Tensor::zeros(&[c, h, w]);
    let od = out.data_mut();
    for (ci, ch) in channels.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                od[(ci * h + y) * w + x] = ch.get(x, y) as f32;
            }
        }
    }
    Ok(out)
}

/// Pack a ground-truth normal map as the `[3, h, w]` target plus its mask.
pub fn pack_target(gt: &NormalMap) -> (Tensor<f32>, Vec<bool>) {
    let (w, h) = (gt.width(), gt.height());
    let mut target = Tensor::zeros(&[3, h, w]);
    let mut valid = vec![false; h * w];
    let td = target.data_mut();
    for y in 0..h {
        for x in 0..w {
            if !gt.valid().get(x, y) {
                continue;
            }
            let n = gt.normal(x, y);
            for c in 0..3 {
                td[(c * h + y) * w + x] = n[c] as f32;
            }
            valid[y * w + x] = true;
        }
    }
    (target, valid)
}

/// Crop `[c, h, w]` sample tensors to a `size` x `size` window at `(x0, y0)`.
pub fn crop_sample(sample: &Sample, x0: usize, y0: usize, size: usize) -> Sample {
    let [c, h, w]: [usize; 3] = sample.input.shape().try_into().expect("input is 3d");
    assert!(x0 + size <= w && y0 + size <= h, "crop out of bounds");
    let crop = |t: &Tensor<f32>, ch: usize| {
        let mut out = Tensor::zeros(&[ch, size, size]);
        let od = out.data_mut();
        for ci in 0..ch {
            for y in 0..size {
                for x in 0..size {
                    od[(ci * size + y) * size + x] = t.data()[(ci * h + y0 + y) * w + x0 + x];
                }
            }
        }
        out
    };
    let mut valid = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            valid[y * size + x] = sample.valid[(y0 + y) * w + x0 + x];
        }
    }
    Sample {
        input: crop(&sample.input, c),
        target: crop(&sample.target, 3),
        valid,
    }
}

/// Stack per-sample `[c, h, w]` tensors into one `[b, c, h, w]` batch.
pub fn batch_inputs<T: Element>(samples: &[&Sample]) -> (Tensor<T>, Tensor<T>, Vec<bool>) {
    let [c, h, w]: [usize; 3] = samples[0].input.shape().try_into().unwrap();
    let b = samples.len();
    let mut input = Tensor::zeros(&[b, c, h, w]);
    let mut target = Tensor::zeros(&[b, 3, h, w]);
    let mut valid = vec![false; b * h * w];
    for (bi, s) in samples.iter().enumerate() {
        assert_eq!(s.input.shape(), samples[0].input.shape());
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    input.data_mut()[idx4(&[b, c, h, w], bi, ci, y, x)] =
                        T::from_f64(s.input.data()[(ci * h + y) * w + x] as f64);
                }
            }
        }
        for ci in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    target.data_mut()[idx4(&[b, 3, h, w], bi, ci, y, x)] =
                        T::from_f64(s.target.data()[(ci * h + y) * w + x] as f64);
                }
            }
        }
        for (i, v) in s.valid.iter().enumerate() {
            valid[bi * h * w + i] = *v;
        }
    }
    (input, target, valid)
}
