use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rank-4 array in (batch, height, width, channels) row-major order.
///
/// This is the universal activation/gradient container: every layer consumes
/// and produces one. Channels are the fastest-varying axis, so a single
/// sample's (h, w, c) block — and each pixel's channel vector — is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        assert!(
            n >= 1 && h >= 1 && w >= 1 && c >= 1,
            "tensor dims must all be >= 1, got ({n}, {h}, {w}, {c})"
        );
        Tensor4 {
            dims: [n, h, w, c],
            data: vec![T::ZERO; n * h * w * c],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("tensor dims must all be >= 1, got {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "data length {} does not match dims {:?} (need {})",
                data.len(),
                dims,
                expected
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    /// Reinterprets the same data under new dims of equal total length.
    pub fn reshaped(self, dims: [usize; 4]) -> Result<Self> {
        Tensor4::from_vec(dims, self.data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.dims[3]
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat offset of element (n, i, j, c).
    #[inline]
    pub fn offset(&self, n: usize, i: usize, j: usize, c: usize) -> usize {
        ((n * self.dims[1] + i) * self.dims[2] + j) * self.dims[3] + c
    }

    #[inline]
    pub fn at(&self, n: usize, i: usize, j: usize, c: usize) -> T {
        self.data[self.offset(n, i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, i: usize, j: usize, c: usize, v: T) {
        let o = self.offset(n, i, j, c);
        self.data[o] = v;
    }

    /// Number of scalars per sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    /// Contiguous slice covering samples `[start, end)`.
    pub fn sample_range(&self, start: usize, end: usize) -> &[T] {
        let per = self.sample_len();
        &self.data[start * per..end * per]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion to another scalar type (used to promote f32
    /// fixtures to f64 in gradient-check tests).
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
