//! Vector primitives: normalization, cosine similarity and cosine distance.
//!
//! Storage precision is the generic [`Scalar`]; every reduction accumulates in
//! `f64` in index order so results do not depend on instruction scheduling.

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

/// Norms at or below this are rejected by `normalize`.
pub const MIN_NORM: f64 = 1e-12;

/// A finite real vector, unit-norm when built with [`Embedding::normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Scale `v` to unit L2 norm.
    ///
    /// Inputs whose norm is already within [`Scalar::UNIT_SNAP`] of one are
    /// returned unchanged, which makes the operation idempotent bitwise.
    pub fn normalize(v: &[T]) -> Result<Self> {
        check_finite(v)?;
        let norm = scalar::norm_sq(v).sqrt();
        if norm <= MIN_NORM {
            return Err(Error::ZeroVector { norm });
        }
        if (norm - 1.0).abs() <= T::UNIT_SNAP {
            return Ok(Self { values: v.to_vec() });
        }
        let values = v
            .iter()
            .map(|x| T::from_f64_lossy(x.to_f64_lossy() / norm))
            .collect();
        Ok(Self { values })
    }

    /// Normalize an `f64` working vector into storage precision.
    pub fn normalize_f64(v: &[f64]) -> Result<Self> {
        let (values, _) = normalize_f64_with_norm::<T>(v)?;
        Ok(Self { values })
    }

    /// Wrap `values` without normalizing. Entries must still be finite.
    pub fn from_raw(values: Vec<T>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        scalar::norm_sq(&self.values).sqrt()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|x| x.to_f64_lossy()).collect()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Re-run normalization on an existing embedding.
    pub fn renormalized(&self) -> Result<Self> {
        Self::normalize(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(scalar::dot(&self.values, &other.values))
    }
}

/// Inner product clamped to `[-1, 1]`.
pub fn cosine_sim<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<f64> {
    Ok(a.dot(b)?.clamp(-1.0, 1.0))
}

/// `1 - cosine_sim(a, b)`, in `[0, 2]`.
pub fn cosine_dist<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<f64> {
    Ok(1.0 - cosine_sim(a, b)?)
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimMismatch { expected, found });
    }
    Ok(())
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Normalize an f64 vector into storage precision, also returning the
/// pre-normalization norm.
pub(crate) fn normalize_f64_with_norm<T: Scalar>(v: &[f64]) -> Result<(Vec<T>, f64)> {
    if v.is_empty() {
        return Err(Error::EmptyVector);
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let norm = scalar::norm_sq(v).sqrt();
    if norm <= MIN_NORM {
        return Err(Error::ZeroVector { norm });
    }
    let scale = if (norm - 1.0).abs() <= T::UNIT_SNAP { 1.0 } else { norm };
    Ok((v.iter().map(|x| T::from_f64_lossy(x / scale)).collect(), norm))
}
