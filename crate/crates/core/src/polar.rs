//! Polarization image decomposition, synthesis, demosaicing, and network
//! input representations.
//!
//! A polarizer at angle `a` sees `I^a = I_un * (1 + rho * cos(2*phi - 2*a))`.
//! Four measurements at 0, pi/4, pi/2 and 3*pi/4 recover the unpolarized
//! intensity `I_un` (their mean), the degree of polarization `rho`, and the
//! angle of polarization `phi` in `[0, pi)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use thiserror::Error;

use crate::image::{BoolMap, FloatMap};
use crate::Vec3;

/// The four polarizer angles, in radians, in stack order.
pub const POLARIZER_ANGLES: [f64; 4] = [0.0, FRAC_PI_4, FRAC_PI_2, 3.0 * FRAC_PI_4];

/// Default degree-of-polarization floor below which the angle of
/// polarization is treated as numerically undefined.
pub const DEFAULT_RHO_MIN: f64 = 1e-3;

/// Raw rho in `(1, 1 + RHO_CLAMP_TOL]` is clamped to 1 (sensor noise);
/// anything larger marks the pixel invalid (model violation).
pub const RHO_CLAMP_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum PolarError {
    #[error("polarizer images disagree in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("negative intensity {value} at pixel ({x}, {y})")]
    NegativeIntensity { x: usize, y: usize, value: f64 },
    #[error("degree of polarization {value} outside [0, 1] at pixel ({x}, {y})")]
    DopOutOfRange { x: usize, y: usize, value: f64 },
    #[error("mosaic dimensions must be even, got {0}x{1}")]
    OddMosaic(usize, usize),
    #[error("candidates representation requires a solver; none was supplied")]
    MissingSolver,
    #[error("input maps disagree in size")]
    InputMismatch,
}

/// Four co-registered intensity maps at the polarizer angles of
/// [`POLARIZER_ANGLES`].
#[derive(Debug, Clone)]
pub struct PolarizerStack {
    images: [FloatMap; 4],
}

impl PolarizerStack {
    pub fn new(images: [FloatMap; 4]) -> Result<Self, PolarError> {
        let (w, h) = (images[0].width(), images[0].height());
        for img in &images[1..] {
            if img.width() != w || img.height() != h {
                return Err(PolarError::DimensionMismatch(
                    w,
                    h,
                    img.width(),
                    img.height(),
                ));
            }
        }
        for img in &images {
            for y in 0..h {
                for x in 0..w {
                    let v = img.get(x, y);
                    if v < 0.0 || !v.is_finite() {
                        return Err(PolarError::NegativeIntensity { x, y, value: v });
                    }
                }
            }
        }
        Ok(Self { images })
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }

    pub fn images(&self) -> &[FloatMap; 4] {
        &self.images
    }

    pub fn image(&self, idx: usize) -> &FloatMap {
        &self.images[idx]
    }
}

/// Per-pixel Stokes-derived quantities with a validity mask.
#[derive(Debug, Clone)]
pub struct StokesMaps {
    pub i_un: FloatMap,
    pub rho: FloatMap,
    pub phi: FloatMap,
    pub valid: BoolMap,
}

impl StokesMaps {
    pub fn width(&self) -> usize {
        self.i_un.width()
    }

    pub fn height(&self) -> usize {
        self.i_un.height()
    }
}

/// Recover `(I_un, rho, phi)` from a polarizer stack.
///
/// `I_un` is the mean of the four measurements; `rho` derives from the two
/// intensity differences; `phi = atan2(I^{pi/4} - I^{3pi/4}, I^0 - I^{pi/2}) / 2`
/// wrapped into `[0, pi)`. Degenerate pixels (non-positive intensity,
/// `rho < rho_min`, or raw rho beyond `1 + RHO_CLAMP_TOL`) are masked, never
/// fatal.
pub fn decompose(stack: &PolarizerStack, rho_min: f64) -> StokesMaps {
    let (w, h) = (stack.width(), stack.height());
    let mut i_un = FloatMap::zeros(w, h);
    let mut rho = FloatMap::zeros(w, h);
    let mut phi = FloatMap::zeros(w, h);
    let mut valid = BoolMap::filled(w, h, false);
    let [i0, i45, i90, i135] = stack.images();
    for y in 0..h {
        for x in 0..w {
            let (a, b, c, d) = (i0.get(x, y), i45.get(x, y), i90.get(x, y), i135.get(x, y));
            let mean = 0.25 * (a + b + c + d);
            i_un.set(x, y, mean);
            if mean <= 0.0 {
                continue;
            }
            let q = a - c;
            let u = b - d;
            let rho_raw = q.hypot(u) / (2.0 * mean);
            let mut p = 0.5 * u.atan2(q);
            if p < 0.0 {
                p += PI;
            }
            phi.set(x, y, p);
            if rho_raw > 1.0 + RHO_CLAMP_TOL {
                // Model violation: keep the raw value so downstream stages
                // can tell this apart from a genuinely unpolarized pixel.
                rho.set(x, y, rho_raw);
                continue;
            }
            let r = rho_raw.min(1.0);
            rho.set(x, y, r);
            valid.set(x, y, r >= rho_min);
        }
    }
    StokesMaps {
        i_un,
        rho,
        phi,
        valid,
    }
}

/// Forward polarizer model: emit the four-image stack for given
/// `(I_un, rho, phi)` fields.
pub fn synthesize(
    i_un: &FloatMap,
    rho: &FloatMap,
    phi: &FloatMap,
) -> Result<PolarizerStack, PolarError> {
    if !i_un.same_dims(rho) || !i_un.same_dims(phi) {
        return Err(PolarError::InputMismatch);
    }
    let (w, h) = (i_un.width(), i_un.height());
    for y in 0..h {
        for x in 0..w {
            let r = rho.get(x, y);
            if !(0.0..=1.0).contains(&r) {
                return Err(PolarError::DopOutOfRange { x, y, value: r });
            }
            if i_un.get(x, y) < 0.0 {
                return Err(PolarError::NegativeIntensity {
                    x,
                    y,
                    value: i_un.get(x, y),
                });
            }
        }
    }
    let mut images: Vec<FloatMap> = Vec::with_capacity(4);
    for angle in POLARIZER_ANGLES {
        images.push(FloatMap::from_fn(w, h, |x, y| {
            i_un.get(x, y) * (1.0 + rho.get(x, y) * (2.0 * phi.get(x, y) - 2.0 * angle).cos())
        }));
    }
    let arr: [FloatMap; 4] = images.try_into().expect("four angles");
    PolarizerStack::new(arr)
}

/// Where each polarizer angle sits inside the repeating 2x2 cell of a
/// polarization filter array. `offsets[i] = (dx, dy)` locates the sample for
/// `POLARIZER_ANGLES[i]`. The exact sensor layout is configurable since it
/// varies between devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MosaicLayout {
    pub offsets: [(usize, usize); 4],
}

impl MosaicLayout {
    /// 90/45 on the top row, 135/0 on the bottom row.
    pub const fn default_pfa() -> Self {
        MosaicLayout {
            offsets: [(1, 1), (1, 0), (0, 0), (0, 1)],
        }
    }

    fn validate(&self) -> bool {
        let mut seen = [[false; 2]; 2];
        for &(dx, dy) in &self.offsets {
            if dx > 1 || dy > 1 || seen[dy][dx] {
                return false;
            }
            seen[dy][dx] = true;
        }
        true
    }
}

impl Default for MosaicLayout {
    fn default() -> Self {
        Self::default_pfa()
    }
}

/// Single-shot polarization filter array frame: each 2x2 cell holds one
/// sample per polarizer angle.
#[derive(Debug, Clone)]
pub struct MosaicImage {
    raw: FloatMap,
    layout: MosaicLayout,
}

impl MosaicImage {
    pub fn new(raw: FloatMap, layout: MosaicLayout) -> Result<Self, PolarError> {
        if raw.width() % 2 != 0 || raw.height() % 2 != 0 {
            return Err(PolarError::OddMosaic(raw.width(), raw.height()));
        }
        assert!(layout.validate(), "mosaic layout must cover the 2x2 cell");
        Ok(Self { raw, layout })
    }

    pub fn raw(&self) -> &FloatMap {
        &self.raw
    }

    pub fn layout(&self) -> MosaicLayout {
        self.layout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemosaicMethod {
    Nearest,
    Bilinear,
}

/// Reconstruct full-resolution per-angle maps from a filter-array frame.
///
/// `Nearest` replicates each cell's sample across the cell. `Bilinear`
/// interpolates each angle's sparse sample grid with border clamping;
/// source pixels keep their exact sample values.
pub fn demosaic(mosaic: &MosaicImage, method: DemosaicMethod) -> Result<PolarizerStack, PolarError> {
    let raw = &mosaic.raw;
    let (w, h) = (raw.width(), raw.height());
    let mut planes: Vec<FloatMap> = Vec::with_capacity(4);
    for &(dx, dy) in &mosaic.layout.offsets {
        let plane = match method {
            DemosaicMethod::Nearest => FloatMap::from_fn(w, h, |x, y| {
                let cx = (x / 2) * 2;
                let cy = (y / 2) * 2;
                raw.get(cx + dx, cy + dy)
            }),
            DemosaicMethod::Bilinear => {
                // Samples for this angle live at (2*j + dx, 2*i + dy).
                let nj = w / 2;
                let ni = h / 2;
                FloatMap::from_fn(w, h, |x, y| {
                    let fj = ((x as f64 - dx as f64) / 2.0).clamp(0.0, (nj - 1) as f64);
                    let fi = ((y as f64 - dy as f64) / 2.0).clamp(0.0, (ni - 1) as f64);
                    let j0 = fj.floor() as usize;
                    let i0 = fi.floor() as usize;
                    let j1 = (j0 + 1).min(nj - 1);
                    let i1 = (i0 + 1).min(ni - 1);
                    let tx = fj - j0 as f64;
                    let ty = fi - i0 as f64;
                    let s = |j: usize, i: usize| raw.get(2 * j + dx, 2 * i + dy);
                    let top = s(j0, i0) * (1.0 - tx) + s(j1, i0) * tx;
                    let bot = s(j0, i1) * (1.0 - tx) + s(j1, i1) * tx;
                    top * (1.0 - ty) + bot * ty
                })
            }
        };
        planes.push(plane);
    }
    let arr: [FloatMap; 4] = planes.try_into().expect("four planes");
    PolarizerStack::new(arr)
}

/// Input representation handed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationVariant {
    /// `(I_un, cos 2*phi, sin 2*phi, rho)` - the encoded-AoP representation.
    Ours,
    /// The four polarizer images unchanged.
    Raw,
    /// `(I_un, phi, rho)` with the raw angle.
    Kondo,
    /// Stacked orthographic candidate normals, 4 x 3 channels.
    Candidates,
}

impl RepresentationVariant {
    pub fn channel_count(&self) -> usize {
        match self {
            RepresentationVariant::Ours | RepresentationVariant::Raw => 4,
            RepresentationVariant::Kondo => 3,
            RepresentationVariant::Candidates => 12,
        }
    }
}

/// Multi-channel network input built from polarization measurements.
#[derive(Debug, Clone)]
pub struct PolarRepresentation {
    pub variant: RepresentationVariant,
    pub channels: Vec<FloatMap>,
}

/// Produces four orthographic candidate normals for a `(rho, phi)`
/// measurement; entries are `None` where the physics admits no solution.
/// Implemented by the solver layer so the representation builder does not
/// depend on it.
pub trait OrthoCandidateSource {
    fn candidates(&self, rho: f64, phi: f64) -> [Option<Vec3>; 4];
}

/// Build the network input representation for one variant.
///
/// The `Candidates` variant needs an orthographic solver; passing `None`
/// with that variant is a configuration error.
pub fn build_representation(
    stokes: &StokesMaps,
    stack: &PolarizerStack,
    variant: RepresentationVariant,
    solver: Option<&dyn OrthoCandidateSource>,
) -> Result<PolarRepresentation, PolarError> {
    if stokes.width() != stack.width() || stokes.height() != stack.height() {
        return Err(PolarError::InputMismatch);
    }
    let (w, h) = (stokes.width(), stokes.height());
    let channels = match variant {
        RepresentationVariant::Ours => vec![
            stokes.i_un.clone(),
            FloatMap::from_fn(w, h, |x, y| (2.0 * stokes.phi.get(x, y)).cos()),
            FloatMap::from_fn(w, h, |x, y| (2.0 * stokes.phi.get(x, y)).sin()),
            stokes.rho.clone(),
        ],
        RepresentationVariant::Raw => stack.images().to_vec(),
        RepresentationVariant::Kondo => vec![
            stokes.i_un.clone(),
            stokes.phi.clone(),
            stokes.rho.clone(),
        ],
        RepresentationVariant::Candidates => {
            let solver = solver.ok_or(PolarError::MissingSolver)?;
            let mut chans = vec![FloatMap::zeros(w, h); 12];
            for y in 0..h {
                for x in 0..w {
                    if !stokes.valid.get(x, y) {
                        continue;
                    }
                    let cands = solver.candidates(stokes.rho.get(x, y), stokes.phi.get(x, y));
                    for (slot, cand) in cands.iter().enumerate() {
                        if let Some(n) = cand {
                            for axis in 0..3 {
                                chans[slot * 3 + axis].set(x, y, n[axis]);
                            }
                        }
                    }
                }
            }
            chans
        }
    };
    debug_assert_eq!(channels.len(), variant.channel_count());
    Ok(PolarRepresentation { variant, channels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fresnel::wrap_pi;

    fn constant_stack(w: usize, h: usize, v: f64) -> PolarizerStack {
        PolarizerStack::new([
            FloatMap::constant(w, h, v),
            FloatMap::constant(w, h, v),
            FloatMap::constant(w, h, v),
            FloatMap::constant(w, h, v),
        ])
        .unwrap()
    }

    fn single_pixel_stack(values: [f64; 4]) -> PolarizerStack {
        PolarizerStack::new([
            FloatMap::constant(1, 1, values[0]),
            FloatMap::constant(1, 1, values[1]),
            FloatMap::constant(1, 1, values[2]),
            FloatMap::constant(1, 1, values[3]),
        ])
        .unwrap()
    }

    struct SplitMix(u64);
    impl SplitMix {
        fn next(&mut self) -> f64 {
            self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = self.0;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    #[test]
    fn decompose_hand_checked_pixel() {
        // Forward synthesis with I_un=1, rho=0.5, phi=pi/4 gives the stack
        // (1.0, 1.5, 1.0, 0.5); the decomposition must recover the inputs.
        let stokes = decompose(&single_pixel_stack([1.0, 1.5, 1.0, 0.5]), DEFAULT_RHO_MIN);
        assert!((stokes.i_un.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((stokes.rho.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((stokes.phi.get(0, 0) - FRAC_PI_4).abs() < 1e-15);
        assert!(stokes.valid.get(0, 0));
    }

    #[test]
    fn decompose_unpolarized_is_masked() {
        let stokes = decompose(&constant_stack(3, 2, 2.5), DEFAULT_RHO_MIN);
        for y in 0..2 {
            for x in 0..3 {
                assert!((stokes.i_un.get(x, y) - 2.5).abs() < 1e-15);
                assert_eq!(stokes.rho.get(x, y), 0.0);
                assert!(!stokes.valid.get(x, y));
            }
        }
    }

    #[test]
    fn decompose_fully_polarized_at_zero() {
        let stokes = decompose(&single_pixel_stack([2.0, 1.0, 0.0, 1.0]), DEFAULT_RHO_MIN);
        assert!((stokes.i_un.get(0, 0) - 1.0).abs() < 1e-15);
        assert!((stokes.rho.get(0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(stokes.phi.get(0, 0), 0.0);
        assert!(stokes.valid.get(0, 0));
    }

    #[test]
    fn decompose_clamps_slightly_overunity_rho_and_masks_worse() {
        // Mean 1.0, rho_raw = 1.0005: clamped to 1, still valid.
        let s = decompose(
            &single_pixel_stack([2.101, 0.8995, 0.1, 0.8995]),
            DEFAULT_RHO_MIN,
        );
        assert!(s.valid.get(0, 0));
        assert_eq!(s.rho.get(0, 0), 1.0);
        // Mean 1.0, rho_raw = 1.1: model violation, masked.
        let s = decompose(&single_pixel_stack([2.3, 0.8, 0.1, 0.8]), DEFAULT_RHO_MIN);
        assert!(!s.valid.get(0, 0));
    }

    #[test]
    fn synthesize_zero_dop_gives_equal_images() {
        let i_un = FloatMap::constant(2, 2, 1.0);
        let rho = FloatMap::zeros(2, 2);
        let phi = FloatMap::zeros(2, 2);
        let stack = synthesize(&i_un, &rho, &phi).unwrap();
        for img in stack.images() {
            for &v in img.data() {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn synthesize_full_dop_cardinal_angles() {
        let i_un = FloatMap::constant(1, 1, 1.0);
        let rho = FloatMap::constant(1, 1, 1.0);
        let phi = FloatMap::zeros(1, 1);
        let stack = synthesize(&i_un, &rho, &phi).unwrap();
        let got: Vec<f64> = stack.images().iter().map(|m| m.get(0, 0)).collect();
        for (g, e) in got.iter().zip([2.0, 1.0, 0.0, 1.0]) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn synthesize_rejects_out_of_range_dop() {
        let i_un = FloatMap::constant(1, 1, 1.0);
        let rho = FloatMap::constant(1, 1, 1.2);
        let phi = FloatMap::zeros(1, 1);
        assert!(matches!(
            synthesize(&i_un, &rho, &phi),
            Err(PolarError::DopOutOfRange { .. })
        ));
    }

    #[test]
    fn round_trip_random_fields() {
        let mut rng = SplitMix(7);
        let (w, h) = (17, 11);
        let i_un = FloatMap::from_fn(w, h, |_, _| 0.05 + 4.0 * rng.next());
        let rho = FloatMap::from_fn(w, h, |_, _| DEFAULT_RHO_MIN * 1.5 + 0.998 * rng.next());
        let rho = FloatMap::from_fn(w, h, |x, y| rho.get(x, y).min(1.0));
        let phi = FloatMap::from_fn(w, h, |_, _| rng.next() * (PI - 1e-9));
        let stack = synthesize(&i_un, &rho, &phi).unwrap();
        let stokes = decompose(&stack, DEFAULT_RHO_MIN);
        for y in 0..h {
            for x in 0..w {
                assert!(stokes.valid.get(x, y), "({x},{y})");
                let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
                assert!(rel(stokes.i_un.get(x, y), i_un.get(x, y)) < 1e-6);
                assert!(rel(stokes.rho.get(x, y), rho.get(x, y)) < 1e-6);
                let dphi = wrap_pi(stokes.phi.get(x, y) - phi.get(x, y));
                assert!(dphi.min(PI - dphi) < 1e-6);
            }
        }
    }

    #[test]
    fn decompose_scale_invariance() {
        // Scaling the stack scales I_un linearly and leaves rho and phi
        // untouched.
        let mut rng = SplitMix(99);
        let i_un = FloatMap::from_fn(6, 5, |_, _| 0.1 + rng.next());
        let rho = FloatMap::from_fn(6, 5, |_, _| 0.05 + 0.9 * rng.next());
        let phi = FloatMap::from_fn(6, 5, |_, _| rng.next() * 3.0);
        let stack = synthesize(&i_un, &rho, &phi).unwrap();
        let scaled = PolarizerStack::new([
            FloatMap::from_fn(6, 5, |x, y| 3.0 * stack.image(0).get(x, y)),
            FloatMap::from_fn(6, 5, |x, y| 3.0 * stack.image(1).get(x, y)),
            FloatMap::from_fn(6, 5, |x, y| 3.0 * stack.image(2).get(x, y)),
            FloatMap::from_fn(6, 5, |x, y| 3.0 * stack.image(3).get(x, y)),
        ])
        .unwrap();
        let a = decompose(&stack, DEFAULT_RHO_MIN);
        let b = decompose(&scaled, DEFAULT_RHO_MIN);
        for i in 0..30 {
            let (x, y) = (i % 6, i / 6);
            assert!((b.i_un.get(x, y) - 3.0 * a.i_un.get(x, y)).abs() < 1e-12);
            assert!((b.rho.get(x, y) - a.rho.get(x, y)).abs() < 1e-12);
            assert!((b.phi.get(x, y) - a.phi.get(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn demosaic_constant_mosaic() {
        let mosaic = MosaicImage::new(FloatMap::constant(6, 4, 3.25), MosaicLayout::default())
            .unwrap();
        for method in [DemosaicMethod::Nearest, DemosaicMethod::Bilinear] {
            let stack = demosaic(&mosaic, method).unwrap();
            for img in stack.images() {
                for &v in img.data() {
                    assert!((v - 3.25).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn demosaic_single_cell_nearest() {
        let raw = FloatMap::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let layout = MosaicLayout::default();
        let mosaic = MosaicImage::new(raw.clone(), layout).unwrap();
        let stack = demosaic(&mosaic, DemosaicMethod::Nearest).unwrap();
        for (i, &(dx, dy)) in layout.offsets.iter().enumerate() {
            let expect = raw.get(dx, dy);
            for &v in stack.image(i).data() {
                assert_eq!(v, expect);
            }
        }
    }

    #[test]
    fn demosaic_rejects_odd_dimensions() {
        assert!(MosaicImage::new(FloatMap::zeros(3, 4), MosaicLayout::default()).is_err());
        assert!(MosaicImage::new(FloatMap::zeros(4, 5), MosaicLayout::default()).is_err());
    }

    #[test]
    fn demosaic_nearest_preserves_source_samples() {
        let mut rng = SplitMix(3);
        let raw = FloatMap::from_fn(8, 8, |_, _| rng.next());
        let layout = MosaicLayout::default();
        let mosaic = MosaicImage::new(raw.clone(), layout).unwrap();
        for method in [DemosaicMethod::Nearest, DemosaicMethod::Bilinear] {
            let stack = demosaic(&mosaic, method).unwrap();
            for (i, &(dx, dy)) in layout.offsets.iter().enumerate() {
                for cy in 0..4 {
                    for cx in 0..4 {
                        let (sx, sy) = (2 * cx + dx, 2 * cy + dy);
                        assert_eq!(stack.image(i).get(sx, sy), raw.get(sx, sy));
                    }
                }
            }
        }
    }

    /// Independent bilinear oracle: closed-form interpolation of each angle's
    /// sample grid at continuous coordinates.
    fn bilinear_oracle(raw: &FloatMap, dx: usize, dy: usize, x: usize, y: usize) -> f64 {
        let nj = raw.width() / 2;
        let ni = raw.height() / 2;
        let grid = FloatMap::from_fn(nj, ni, |j, i| raw.get(2 * j + dx, 2 * i + dy));
        grid.sample_bilinear((x as f64 - dx as f64) / 2.0, (y as f64 - dy as f64) / 2.0)
    }

    #[test]
    fn demosaic_bilinear_matches_oracle() {
        let mut rng = SplitMix(11);
        let raw = FloatMap::from_fn(8, 8, |_, _| rng.next());
        let layout = MosaicLayout::default();
        let mosaic = MosaicImage::new(raw.clone(), layout).unwrap();
        let stack = demosaic(&mosaic, DemosaicMethod::Bilinear).unwrap();
        for (i, &(dx, dy)) in layout.offsets.iter().enumerate() {
            for y in 0..8 {
                for x in 0..8 {
                    let expect = bilinear_oracle(&raw, dx, dy, x, y);
                    let got = stack.image(i).get(x, y);
                    assert!(
                        (got - expect).abs() < 1e-12,
                        "plane {i} at ({x},{y}): {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn representation_ours_encodes_aop_on_unit_circle() {
        let stack = single_pixel_stack([1.0, 1.5, 1.0, 0.5]);
        let stokes = decompose(&stack, DEFAULT_RHO_MIN);
        let rep =
            build_representation(&stokes, &stack, RepresentationVariant::Ours, None).unwrap();
        assert_eq!(rep.channels.len(), 4);
        let c = rep.channels[1].get(0, 0);
        let s = rep.channels[2].get(0, 0);
        assert!((c * c + s * s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn representation_encoding_at_zero_and_pi_periodicity() {
        // phi = 0 encodes to (1, 0); phi and phi + pi encode identically.
        let enc = |phi: f64| ((2.0 * phi).cos(), (2.0 * phi).sin());
        assert_eq!(enc(0.0), (1.0, 0.0));
        for phi in [0.3, 1.1, 2.9] {
            let (c0, s0) = enc(phi);
            let (c1, s1) = enc(phi + PI);
            assert!((c0 - c1).abs() < 1e-12 && (s0 - s1).abs() < 1e-12);
        }
        // The map phi -> (cos 2phi, sin 2phi) is injective on [0, pi).
        let a = enc(0.4);
        let b = enc(0.4 + 0.1);
        assert!((a.0 - b.0).abs() + (a.1 - b.1).abs() > 1e-3);
    }

    #[test]
    fn representation_channel_counts() {
        let stack = constant_stack(2, 2, 1.0);
        let stokes = decompose(&stack, DEFAULT_RHO_MIN);
        for (variant, count) in [
            (RepresentationVariant::Ours, 4),
            (RepresentationVariant::Raw, 4),
            (RepresentationVariant::Kondo, 3),
        ] {
            let rep = build_representation(&stokes, &stack, variant, None).unwrap();
            assert_eq!(rep.channels.len(), count);
        }
    }

    #[test]
    fn representation_candidates_requires_solver() {
        let stack = constant_stack(2, 2, 1.0);
        let stokes = decompose(&stack, DEFAULT_RHO_MIN);
        assert!(matches!(
            build_representation(&stokes, &stack, RepresentationVariant::Candidates, None),
            Err(PolarError::MissingSolver)
        ));
    }
}
