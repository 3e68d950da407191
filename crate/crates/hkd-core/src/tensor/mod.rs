//! Dense 4-axis tensors and reverse-mode automatic differentiation.
//!
//! Everything the networks need is expressed over [`Tensor4`], a contiguous
//! `(batch, maps, height, width)` array. Training runs in `f32`; gradient
//! checking always runs in `f64` (see [`gradcheck`]). All reductions use a
//! fixed summation order so a given build produces bit-stable results.

pub mod conv;
pub mod gemm;
pub mod gradcheck;
pub mod graph;

use std::fmt;

use thiserror::Error;

/// Scalar element type of the engine. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + rustfft::FftNum
    + std::iter::Sum
    + fmt::Display
    + Default
{
    /// Storage width in bits; gradient checks require 64.
    const BITS: u32;

    fn of_f64(v: f64) -> Self {
        num_traits::NumCast::from(v).expect("finite f64 converts to scalar")
    }

    fn into_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;
}

impl Scalar for f64 {
    const BITS: u32 = 64;
}

/// Errors produced by tensor construction and the graph operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape {shape} (expected {expected})")]
    DataLength { shape: Shape4, expected: usize, got: usize },
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch { op: &'static str, left: Shape4, right: Shape4 },
    #[error("{op}: invalid input shape {shape}: {reason}")]
    InvalidShape { op: &'static str, shape: Shape4, reason: String },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("backward requires a scalar output node, got shape {0}")]
    NonScalarOutput(Shape4),
    #[error("{op}: class index {index} out of range for {classes} classes")]
    IndexOutOfRange { op: &'static str, index: usize, classes: usize },
    #[error("{op}: parent node {node} does not belong to this graph")]
    ForeignNode { op: &'static str, node: usize },
    #[error("gradient checks require 64-bit scalars, got {0}-bit")]
    NeedsF64(u32),
}

/// Shape of a [`Tensor4`]: batch, feature maps, height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape4 {
    pub batch: usize,
    pub maps: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub const fn new(batch: usize, maps: usize, height: usize, width: usize) -> Self {
        Self { batch, maps, height, width }
    }

    pub fn len(&self) -> usize {
        self.batch * self.maps * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of a per-sample scalar column: `(batch, 1, 1, 1)`.
    pub fn column(batch: usize) -> Self {
        Self::new(batch, 1, 1, 1)
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.batch, self.maps, self.height, self.width)
    }
}

/// Dense 4-axis tensor with contiguous row-major storage
/// (width fastest, then height, maps, batch).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape4,
    values: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self { shape, values: vec![T::zero(); shape.len()] }
    }

    pub fn filled(shape: Shape4, v: T) -> Self {
        Self { shape, values: vec![v; shape.len()] }
    }

    pub fn from_vec(shape: Shape4, values: Vec<T>) -> Result<Self, TensorError> {
        if values.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.len(),
                got: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    /// Scalar tensor of shape `(1,1,1,1)`.
    pub fn scalar(v: T) -> Self {
        Self { shape: Shape4::new(1, 1, 1, 1), values: vec![v] }
    }

    /// Per-sample column `(batch,1,1,1)` from a slice.
    pub fn column(values: &[T]) -> Self {
        Self { shape: Shape4::column(values.len()), values: values.to_vec() }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> T {
        debug_assert!(self.shape.is_scalar());
        self.values[0]
    }

    #[inline]
    pub fn at(&self, b: usize, m: usize, h: usize, w: usize) -> T {
        self.values[self.offset(b, m, h, w)]
    }

    #[inline]
    pub fn at_mut(&mut self, b: usize, m: usize, h: usize, w: usize) -> &mut T {
        let i = self.offset(b, m, h, w);
        &mut self.values[i]
    }

    #[inline]
    fn offset(&self, b: usize, m: usize, h: usize, w: usize) -> usize {
        debug_assert!(
            b < self.shape.batch && m < self.shape.maps && h < self.shape.height && w < self.shape.width
        );
        ((b * self.shape.maps + m) * self.shape.height + h) * self.shape.width + w
    }

    /// Contiguous `(height, width)` plane of one `(batch, map)` pair.
    pub fn plane(&self, b: usize, m: usize) -> &[T] {
        let plane = self.shape.height * self.shape.width;
        let start = (b * self.shape.maps + m) * plane;
        &self.values[start..start + plane]
    }

    pub fn plane_mut(&mut self, b: usize, m: usize) -> &mut [T] {
        let plane = self.shape.height * self.shape.width;
        let start = (b * self.shape.maps + m) * plane;
        &mut self.values[start..start + plane]
    }

    /// Contiguous slice of one batch item (all maps).
    pub fn batch_item(&self, b: usize) -> &[T] {
        let item = self.shape.maps * self.shape.height * self.shape.width;
        &self.values[b * item..(b + 1) * item]
    }

    pub fn map_values<F: Fn(T) -> T>(&self, f: F) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of all elements, accumulated in storage order.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.values {
            acc += v;
        }
        acc
    }

    pub fn scale_in_place(&mut self, c: T) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// `self += c * other`; shapes must match.
    pub fn axpy_in_place(&mut self, c: T, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += c * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Lossy element-wise conversion between scalar widths.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            values: self.values.iter().map(|v| U::of_f64(v.into_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor4::<f64>::from_vec(Shape4::new(1, 2, 1, 3), vec![0.0; 5]).unwrap_err();
        match err {
            TensorError::DataLength { expected, got, .. } => {
                assert_eq!(expected, 6);
                assert_eq!(got, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn indexing_is_row_major_width_fastest() {
        let t = Tensor4::from_vec(
            Shape4::new(1, 2, 1, 3),
            vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0],
        )
        .unwrap();
        assert_eq!(t.at(0, 0, 0, 2), 2.0);
        assert_eq!(t.at(0, 1, 0, 0), 10.0);
        assert_eq!(t.plane(0, 1), &[10.0, 11.0, 12.0]);
    }

    #[test]
    fn sum_uses_storage_order() {
        let t = Tensor4::from_vec(Shape4::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.sum(), 10.0);
    }
}
