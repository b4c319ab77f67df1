//! 2D convolution (stride 1) and the token-wise linear layer.
//!
//! The 3x3/pad-1 case dominates the network cost and gets fused-stencil
//! kernels: each row is accumulated in a single pass with the three kernel
//! taps held in registers. Other kernel sizes fall back to a generic path.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{init_uniform, Layer};
use crate::scalar::Element;
use crate::tensor::{idx3, Tensor};

/// `k x k` convolution, stride 1, symmetric zero padding.
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>, // [cout, cin, k, k]
    pub bias: Tensor<T>,   // [cout]
    kernel: usize,
    pad: usize,
    cached_input: Option<Tensor<T>>,
}

impl<T: Element> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            weight: init_uniform(&[cout, cin, kernel, kernel], fan_in, rng),
            bias: init_uniform(&[cout], fan_in, rng),
            kernel,
            pad,
            cached_input: None,
        }
    }

    fn out_dim(&self, d: usize) -> usize {
        d + 2 * self.pad + 1 - self.kernel
    }
}

/// One fused stencil row: `buf[x] += w0*row[x-1] + w1*row[x] + w2*row[x+1]`
/// with zero padding at the borders. Shifted-slice zips keep the interior
/// loop free of bounds checks so it vectorizes.
#[inline]
fn stencil_row<T: Element>(buf: &mut [T], row: &[T], w0: T, w1: T, w2: T) {
    let w = row.len();
    if w == 1 {
        buf[0] += w1 * row[0];
        return;
    }
    buf[0] += w1 * row[0] + w2 * row[1];
    let interior = &mut buf[1..w - 1];
    for (((d, a), b), c) in interior
        .iter_mut()
        .zip(&row[..w - 2])
        .zip(&row[1..w - 1])
        .zip(&row[2..w])
    {
        *d += w0 * *a + w1 * *b + w2 * *c;
    }
    buf[w - 1] += w0 * row[w - 2] + w1 * row[w - 1];
}

/// Three simultaneous shifted dot products of `g` against `row`:
/// `(sum g[x]*row[x-1], sum g[x]*row[x], sum g[x]*row[x+1])`.
///
/// Each sum runs over four lanes in a fixed interleave, which vectorizes
/// while keeping the reduction order deterministic.
#[inline]
fn stencil_dots<T: Element>(g: &[T], row: &[T]) -> (T, T, T) {
    let w = row.len();
    if w == 1 {
        return (T::ZERO, g[0] * row[0], T::ZERO);
    }
    let mut l0 = [T::ZERO; 4];
    let mut l1 = [T::ZERO; 4];
    let mut l2 = [T::ZERO; 4];
    let interior = &g[1..w - 1];
    for (i, ((gv, a), b)) in interior
        .iter()
        .zip(&row[..w - 2])
        .zip(&row[1..w - 1])
        .enumerate()
    {
        let lane = i & 3;
        l0[lane] += *gv * *a;
        l1[lane] += *gv * *b;
    }
    for (i, (gv, c)) in interior.iter().zip(&row[2..w]).enumerate() {
        let lane = i & 3;
        l2[lane] += *gv * *c;
    }
    let mut a0 = (l0[0] + l0[1]) + (l0[2] + l0[3]);
    let mut a1 = (l1[0] + l1[1]) + (l1[2] + l1[3]);
    let mut a2 = (l2[0] + l2[1]) + (l2[2] + l2[3]);
    a1 += g[0] * row[0];
    a2 += g[0] * row[1];
    let gv = g[w - 1];
    a0 += gv * row[w - 2];
    a1 += gv * row[w - 1];
    (a0, a1, a2)
}

impl<T: Element> Conv2d<T> {
    fn forward_3x3(&self, x: &Tensor<T>, out: &mut Tensor<T>) {
        let [_, cin, h, w]: [usize; 4] = x.shape().try_into().unwrap();
        let cout = self.weight.shape()[0];
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        out.data_mut()
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(plane, od)| {
                let (bi, co) = (plane / cout, plane % cout);
                let mut buf = vec![T::ZERO; w];
                for oy in 0..h {
                    buf.fill(bd[co]);
                    for ci in 0..cin {
                        let xplane = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        let wbase = (co * cin + ci) * 9;
                        for ky in 0..3usize {
                            let sy = oy as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[sy as usize * w..sy as usize * w + w];
                            stencil_row(
                                &mut buf,
                                xrow,
                                wd[wbase + ky * 3],
                                wd[wbase + ky * 3 + 1],
                                wd[wbase + ky * 3 + 2],
                            );
                        }
                    }
                    od[oy * w..(oy + 1) * w].copy_from_slice(&buf);
                }
            });
    }

    fn forward_generic(&self, x: &Tensor<T>, out: &mut Tensor<T>) {
        let [_, cin, h, w]: [usize; 4] = x.shape().try_into().unwrap();
        let cout = self.weight.shape()[0];
        let (oh, ow) = (out.shape()[2], out.shape()[3]);
        let k = self.kernel;
        let pad = self.pad as isize;
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        out.data_mut()
            .par_chunks_mut(oh * ow)
            .enumerate()
            .for_each(|(plane, od)| {
                let (bi, co) = (plane / cout, plane % cout);
                let mut buf = vec![T::ZERO; ow];
                for oy in 0..oh {
                    buf.fill(bd[co]);
                    for ci in 0..cin {
                        let xplane = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        let wbase = ((co * cin + ci) * k) * k;
                        for ky in 0..k {
                            let sy = oy as isize + ky as isize - pad;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[sy as usize * w..sy as usize * w + w];
                            for kx in 0..k {
                                let wv = wd[wbase + ky * k + kx];
                                let dx = kx as isize - pad;
                                let x0 = (-dx).max(0) as usize;
                                let x1 = (w as isize - dx).min(ow as isize) as usize;
                                if x0 >= x1 {
                                    continue;
                                }
                                let src =
                                    &xrow[(x0 as isize + dx) as usize..(x1 as isize + dx) as usize];
                                let dst = &mut buf[x0..x1];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * *s;
                                }
                            }
                        }
                    }
                    od[oy * ow..(oy + 1) * ow].copy_from_slice(&buf);
                }
            });
    }

    fn backward_3x3(&mut self, grad_out: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
        let [b, cin, h, w]: [usize; 4] = x.shape().try_into().unwrap();
        let cout = self.weight.shape()[0];
        let gd = grad_out.data();
        let xd = x.data();

        // Parameter gradients, parallel over output channels: three shifted
        // dot products resolve one kernel row at a time.
        let wgrads: Vec<(Vec<T>, T)> = (0..cout)
            .into_par_iter()
            .map(|co| {
                let mut wg = vec![T::ZERO; cin * 9];
                let mut bg = T::ZERO;
                for bi in 0..b {
                    let gplane = &gd[(bi * cout + co) * h * w..(bi * cout + co + 1) * h * w];
                    for g in gplane {
                        bg += *g;
                    }
                    for ci in 0..cin {
                        let xplane = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        for oy in 0..h {
                            let grow = &gplane[oy * w..(oy + 1) * w];
                            for ky in 0..3usize {
                                let sy = oy as isize + ky as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[sy as usize * w..sy as usize * w + w];
                                let (a0, a1, a2) = stencil_dots(grow, xrow);
                                let base = ci * 9 + ky * 3;
                                wg[base] += a0;
                                wg[base + 1] += a1;
                                wg[base + 2] += a2;
                            }
                        }
                    }
                }
                (wg, bg)
            })
            .collect();
        for (co, (wg, bg)) in wgrads.into_iter().enumerate() {
            let base = co * cin * 9;
            let dst = &mut self.weight.grad_mut()[base..base + cin * 9];
            for (d, s) in dst.iter_mut().zip(&wg) {
                *d += *s;
            }
            self.bias.grad_mut()[co] += bg;
        }

        // Input gradient: stencil with the flipped kernel.
        let wd = self.weight.data();
        let mut grad_in = Tensor::zeros(&[b, cin, h, w]);
        grad_in
            .data_mut()
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(plane, gi)| {
                let (bi, ci) = (plane / cin, plane % cin);
                let mut buf = vec![T::ZERO; w];
                for sy in 0..h {
                    buf.fill(T::ZERO);
                    for co in 0..cout {
                        let gplane = &gd[(bi * cout + co) * h * w..(bi * cout + co + 1) * h * w];
                        let wbase = (co * cin + ci) * 9;
                        for ky in 0..3usize {
                            let oy = sy as isize - (ky as isize - 1);
                            if oy < 0 || oy >= h as isize {
                                continue;
                            }
                            let grow = &gplane[oy as usize * w..oy as usize * w + w];
                            // Flipped taps: in[sx] gathers g[sx+1-kx].
                            stencil_row(
                                &mut buf,
                                grow,
                                wd[wbase + ky * 3 + 2],
                                wd[wbase + ky * 3 + 1],
                                wd[wbase + ky * 3],
                            );
                        }
                    }
                    gi[sy * w..(sy + 1) * w].copy_from_slice(&buf);
                }
            });
        grad_in
    }

    fn backward_generic(&mut self, grad_out: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
        let [b, cin, h, w]: [usize; 4] = x.shape().try_into().unwrap();
        let cout = self.weight.shape()[0];
        let k = self.kernel;
        let pad = self.pad as isize;
        let (oh, ow) = (grad_out.shape()[2], grad_out.shape()[3]);
        let gd = grad_out.data();
        let xd = x.data();

        let wgrads: Vec<(Vec<T>, T)> = (0..cout)
            .into_par_iter()
            .map(|co| {
                let mut wg = vec![T::ZERO; cin * k * k];
                let mut bg = T::ZERO;
                for bi in 0..b {
                    let gplane = &gd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                    for g in gplane {
                        bg += *g;
                    }
                    for ci in 0..cin {
                        let xplane = &xd[(bi * cin + ci) * h * w..(bi * cin + ci + 1) * h * w];
                        for ky in 0..k {
                            for kx in 0..k {
                                let dy = ky as isize - pad;
                                let dx = kx as isize - pad;
                                let mut acc = T::ZERO;
                                for oy in 0..oh {
                                    let sy = oy as isize + dy;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    let x0 = (-dx).max(0) as usize;
                                    let x1 = (w as isize - dx).min(ow as isize) as usize;
                                    if x0 >= x1 {
                                        continue;
                                    }
                                    let src = &xplane[sy as usize * w + (x0 as isize + dx) as usize
                                        ..sy as usize * w + (x1 as isize + dx) as usize];
                                    let g = &gplane[oy * ow + x0..oy * ow + x1];
                                    for (gv, sv) in g.iter().zip(src) {
                                        acc += *gv * *sv;
                                    }
                                }
                                wg[(ci * k + ky) * k + kx] += acc;
                            }
                        }
                    }
                }
                (wg, bg)
            })
            .collect();
        for (co, (wg, bg)) in wgrads.into_iter().enumerate() {
            let base = co * cin * k * k;
            let dst = &mut self.weight.grad_mut()[base..base + cin * k * k];
            for (d, s) in dst.iter_mut().zip(&wg) {
                *d += *s;
            }
            self.bias.grad_mut()[co] += bg;
        }

        let wd = self.weight.data();
        let mut grad_in = Tensor::zeros(&[b, cin, h, w]);
        grad_in
            .data_mut()
            .par_chunks_mut(h * w)
            .enumerate()
            .for_each(|(plane, gi)| {
                let (bi, ci) = (plane / cin, plane % cin);
                let mut buf = vec![T::ZERO; w];
                for sy in 0..h {
                    buf.fill(T::ZERO);
                    for co in 0..cout {
                        let gplane =
                            &gd[(bi * cout + co) * oh * ow..(bi * cout + co + 1) * oh * ow];
                        let wbase = ((co * cin + ci) * k) * k;
                        for ky in 0..k {
                            let oy = sy as isize - (ky as isize - pad);
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            let grow = &gplane[oy as usize * ow..oy as usize * ow + ow];
                            for kx in 0..k {
                                let wv = wd[wbase + ky * k + kx];
                                let dx = kx as isize - pad;
                                let sx0 = dx.max(0) as usize;
                                let sx1 = (ow as isize + dx).min(w as isize) as usize;
                                if sx0 >= sx1 {
                                    continue;
                                }
                                let g = &grow
                                    [(sx0 as isize - dx) as usize..(sx1 as isize - dx) as usize];
                                let dst = &mut buf[sx0..sx1];
                                for (d, s) in dst.iter_mut().zip(g) {
                                    *d += wv * *s;
                                }
                            }
                        }
                    }
                    gi[sy * w..(sy + 1) * w].copy_from_slice(&buf);
                }
            });
        grad_in
    }
}

impl<T: Element> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, cin, h, w]: [usize; 4] = x.shape().try_into().expect("conv input is 4d");
        assert_eq!(cin, self.weight.shape()[1], "channel mismatch");
        let cout = self.weight.shape()[0];
        let (oh, ow) = (self.out_dim(h), self.out_dim(w));
        let mut out = Tensor::zeros(&[b, cout, oh, ow]);
        if self.kernel == 3 && self.pad == 1 {
            self.forward_3x3(x, &mut out);
        } else {
            self.forward_generic(x, &mut out);
        }
        self.cached_input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.cached_input.take().expect("forward before backward");
        if self.kernel == 3 && self.pad == 1 {
            self.backward_3x3(grad_out, &x)
        } else {
            self.backward_generic(grad_out, &x)
        }
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// Fully connected layer over the last axis of a `[b, s, d]` token tensor.
pub struct Linear<T: Element> {
    pub weight: Tensor<T>, // [dout, din]
    pub bias: Tensor<T>,   // [dout]
    cached_input: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new(din: usize, dout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: init_uniform(&[dout, din], din, rng),
            bias: init_uniform(&[dout], din, rng),
            cached_input: None,
        }
    }
}

impl<T: Element> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [b, s, din]: [usize; 3] = x.shape().try_into().expect("linear input is 3d");
        assert_eq!(din, self.weight.shape()[1]);
        let dout = self.weight.shape()[0];
        let mut out = Tensor::zeros(&[b, s, dout]);
        let wd = self.weight.data();
        let bd = self.bias.data();
        let xd = x.data();
        let od = out.data_mut();
        for bi in 0..b {
            for si in 0..s {
                let xrow = &xd[idx3(x.shape(), bi, si, 0)..idx3(x.shape(), bi, si, 0) + din];
                let orow = &mut od[(bi * s + si) * dout..(bi * s + si) * dout + dout];
                for (j, o) in orow.iter_mut().enumerate() {
                    let wrow = &wd[j * din..(j + 1) * din];
                    let mut acc = bd[j];
                    for (wv, xv) in wrow.iter().zip(xrow) {
                        acc += *wv * *xv;
                    }
                    *o = acc;
                }
            }
        }
        self.cached_input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Tensor<T> {
        let x = self.cached_input.take().expect("forward before backward");
        let [b, s, din]: [usize; 3] = x.shape().try_into().unwrap();
        let dout = self.weight.shape()[0];
        let mut grad_in = Tensor::zeros(&[b, s, din]);
        let xd = x.data();
        let gd = grad_out.data();
        {
            let wg = self.weight.grad_mut();
            for bi in 0..b {
                for si in 0..s {
                    let xrow = &xd[(bi * s + si) * din..(bi * s + si + 1) * din];
                    let grow = &gd[(bi * s + si) * dout..(bi * s + si + 1) * dout];
                    for (j, g) in grow.iter().enumerate() {
                        let wgrow = &mut wg[j * din..(j + 1) * din];
                        for (w, xv) in wgrow.iter_mut().zip(xrow) {
                            *w += *g * *xv;
                        }
                    }
                }
            }
        }
        {
            let bg = self.bias.grad_mut();
            for bi in 0..b {
                for si in 0..s {
                    let grow = &gd[(bi * s + si) * dout..(bi * s + si + 1) * dout];
                    for (j, g) in grow.iter().enumerate() {
                        bg[j] += *g;
                    }
                }
            }
        }
        let wd = self.weight.data();
        let gid = grad_in.data_mut();
        for bi in 0..b {
            for si in 0..s {
                let grow = &gd[(bi * s + si) * dout..(bi * s + si + 1) * dout];
                let girow = &mut gid[(bi * s + si) * din..(bi * s + si + 1) * din];
                for (j, g) in grow.iter().enumerate() {
                    let wrow = &wd[j * din..(j + 1) * din];
                    for (gi, wv) in girow.iter_mut().zip(wrow) {
                        *gi += *g * *wv;
                    }
                }
            }
        }
        grad_in
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}
