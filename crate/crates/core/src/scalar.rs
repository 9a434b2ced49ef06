use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the numerical core is generic over.
///
/// Implemented for `f32` (fast training, matches the on-disk model format)
/// and `f64` (oracles, bound evaluation, gradient checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless for f64, rounds to nearest for f32.
    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Converts between scalar types via f64.
#[inline]
pub fn cast<A: Scalar, B: Scalar>(a: A) -> B {
    B::of(a.as_f64())
}

/// Round half away from zero to the nearest integer multiple of `pitch`.
#[inline]
pub fn round_to_grid<T: Scalar>(value: T, pitch: T) -> T {
    (value / pitch).round() * pitch
}
