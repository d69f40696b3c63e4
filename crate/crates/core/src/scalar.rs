//! Storage scalar abstraction.
//!
//! Embeddings are stored in a [`Scalar`] (usually `f32`) while every reduction
//! accumulates in `f64`. Results of reductions are always `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// floating point storage type: f32 or f64
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Relative distance from 1 at which a norm is treated as already unit.
    ///
    /// A vector normalized in this precision carries a rounding error of a
    /// few ulps in its norm; snapping inside this band keeps `normalize`
    /// idempotent bit-for-bit.
    const UNIT_SNAP: f64;

    fn to_f64_lossy(self) -> f64;
    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    const UNIT_SNAP: f64 = 4.0 * f32::EPSILON as f64;

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    const UNIT_SNAP: f64 = 4.0 * f64::EPSILON;

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self
    }

    #[inline(always)]
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Dot product of two equal-length slices, accumulated in f64 in index order.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four independent lanes, combined in a fixed order
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i].to_f64_lossy() * b[i].to_f64_lossy();
        acc[1] += a[i + 1].to_f64_lossy() * b[i + 1].to_f64_lossy();
        acc[2] += a[i + 2].to_f64_lossy() * b[i + 2].to_f64_lossy();
        acc[3] += a[i + 3].to_f64_lossy() * b[i + 3].to_f64_lossy();
    }
    let mut tail = 0.0f64;
    for i in chunks * 4..a.len() {
        tail += a[i].to_f64_lossy() * b[i].to_f64_lossy();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared L2 norm accumulated in f64.
#[inline]
pub fn norm_sq<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a)
}
