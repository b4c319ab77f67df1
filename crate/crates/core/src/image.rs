//! Dense 2D maps used throughout the toolkit.
//!
//! Pixels are stored row-major; `(x, y)` indexes column `x` of row `y` with
//! row 0 at the top of the image.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("data length {got} does not match {width}x{height}")]
    BadLength {
        width: usize,
        height: usize,
        got: usize,
    },
}

/// A single-channel floating-point map.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != width * height {
            return Err(ImageError::BadLength {
                width,
                height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_dims(&self, other: &FloatMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at fractional pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// A single-channel boolean mask with the same layout as [`FloatMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoolMap {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BoolMap {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Pixel-wise logical AND of two masks with identical dimensions.
    pub fn and(&self, other: &BoolMap) -> BoolMap {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        BoolMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(FloatMap::from_vec(3, 2, vec![0.0; 5]).is_err());
        assert!(FloatMap::from_vec(3, 2, vec![0.0; 6]).is_ok());
    }

    #[test]
    fn bilinear_matches_corners_and_center() {
        let m = FloatMap::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.sample_bilinear(0.0, 0.0), 0.0);
        assert_eq!(m.sample_bilinear(1.0, 0.0), 1.0);
        assert!((m.sample_bilinear(0.5, 0.5) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bilinear_clamps_outside() {
        let m = FloatMap::from_vec(2, 1, vec![4.0, 8.0]).unwrap();
        assert_eq!(m.sample_bilinear(-3.0, 0.0), 4.0);
        assert_eq!(m.sample_bilinear(5.0, 0.0), 8.0);
    }
}
