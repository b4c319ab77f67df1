//! Dense n-dimensional tensor, row-major, with an optional gradient buffer.
//! Parameters keep a gradient allocated; activations do not.

use crate::scalar::Element;

#[derive(Debug, Clone)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::ZERO; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length must match shape {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        }
    }

    /// Allocate (or zero) the gradient buffer, marking this a parameter.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![T::ZERO; self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        self.grad.as_deref_mut().expect("tensor has no gradient buffer")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(T::ZERO);
        }
    }

    /// Cast element type (used when moving between training and checking
    /// precision, and for checkpoint serialization).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect();
        let mut out = Tensor::from_vec(&self.shape, data);
        if self.grad.is_some() {
            out = out.with_grad();
        }
        out
    }
}

/// Flat index helpers for the common 4D [b, c, y, x] layout.
#[inline]
pub fn idx4(shape: &[usize], b: usize, c: usize, y: usize, x: usize) -> usize {
    debug_assert_eq!(shape.len(), 4);
    ((b * shape[1] + c) * shape[2] + y) * shape[3] + x
}

/// Flat index for the 3D [b, s, d] token layout.
#[inline]
pub fn idx3(shape: &[usize], b: usize, s: usize, d: usize) -> usize {
    debug_assert_eq!(shape.len(), 3);
    (b * shape[1] + s) * shape[2] + d
}
