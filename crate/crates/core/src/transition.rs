//! Semantic transition: shift caption embeddings along the modification-text
//! embedding before set-to-set scoring.
//!
//! Each caption `t_k` becomes `(1 - alpha) * t_k + alpha * delta`, re-normalized
//! by default. The blend is evaluated in `f64` and rounded once into storage
//! precision.

use crate::embedding::{check_dims, normalize_f64_with_norm, Embedding};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default fusion weight.
pub const DEFAULT_ALPHA: f64 = 0.45;

/// Unit-norm modification-text embedding used as the transition direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionVector<T: Scalar>(Embedding<T>);

impl<T: Scalar> TransitionVector<T> {
    pub fn new(values: &[T]) -> Result<Self> {
        Ok(Self(Embedding::normalize(values)?))
    }

    pub fn from_embedding(e: &Embedding<T>) -> Result<Self> {
        Ok(Self(e.renormalized()?))
    }

    pub fn embedding(&self) -> &Embedding<T> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionOptions {
    pub alpha: f64,
    /// Re-normalize the blend to unit length. Disable only for ablations.
    pub renormalize: bool,
}

impl Default for FusionOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, renormalize: true }
    }
}

/// A fused caption plus the norm of the blend before re-normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedPoint<T: Scalar> {
    pub embedding: Embedding<T>,
    pub pre_norm: f64,
}

/// K caption points with implicit uniform mass `1/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionDistribution<T: Scalar> {
    points: Vec<Embedding<T>>,
    fused: bool,
    alpha: Option<f64>,
    pre_norms: Vec<f64>,
}

impl<T: Scalar> CaptionDistribution<T> {
    /// Wrap already prepared points. All must share one dimension.
    pub fn from_points(points: Vec<Embedding<T>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyCaptionSet)?.dim();
        for p in &points {
            check_dims(dim, p.dim())?;
        }
        let pre_norms = points.iter().map(Embedding::norm).collect();
        Ok(Self { points, fused: false, alpha: None, pre_norms })
    }

    pub fn points(&self) -> &[Embedding<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn fused(&self) -> bool {
        self.fused
    }

    /// The fusion weight, when fusion was applied.
    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// Norm of each point before the final normalization.
    pub fn pre_norms(&self) -> &[f64] {
        &self.pre_norms
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    Ok(())
}

/// `normalize((1 - alpha) * caption + alpha * delta)`.
pub fn apply_transition<T: Scalar>(
    caption: &Embedding<T>,
    delta: &TransitionVector<T>,
    alpha: f64,
) -> Result<Embedding<T>> {
    apply_transition_with(caption, delta, FusionOptions { alpha, renormalize: true })
        .map(|f| f.embedding)
}

pub fn apply_transition_with<T: Scalar>(
    caption: &Embedding<T>,
    delta: &TransitionVector<T>,
    opts: FusionOptions,
) -> Result<FusedPoint<T>> {
    check_alpha(opts.alpha)?;
    check_dims(caption.dim(), delta.dim())?;
    let alpha = opts.alpha;

    // endpoints are exact selections, not blends
    if opts.renormalize && (alpha == 0.0 || alpha == 1.0) {
        let src = if alpha == 0.0 { caption } else { delta.embedding() };
        let pre_norm = src.norm();
        return Ok(FusedPoint { embedding: src.renormalized()?, pre_norm });
    }

    let blend: Vec<f64> = caption
        .values()
        .iter()
        .zip(delta.embedding().values())
        .map(|(c, d)| (1.0 - alpha) * c.to_f64_lossy() + alpha * d.to_f64_lossy())
        .collect();

    if opts.renormalize {
        let (values, pre_norm) = normalize_f64_with_norm::<T>(&blend)?;
        Ok(FusedPoint { embedding: Embedding::from_raw(values)?, pre_norm })
    } else {
        let pre_norm = blend.iter().map(|x| x * x).sum::<f64>().sqrt();
        let values = blend.into_iter().map(T::from_f64_lossy).collect();
        Ok(FusedPoint { embedding: Embedding::from_raw(values)?, pre_norm })
    }
}

/// Build the caption distribution, fusing each caption with `delta` when given.
pub fn build_caption_distribution<T: Scalar>(
    captions: &[Embedding<T>],
    delta: Option<&TransitionVector<T>>,
    alpha: f64,
) -> Result<CaptionDistribution<T>> {
    build_caption_distribution_with(captions, delta, FusionOptions { alpha, renormalize: true })
}

pub fn build_caption_distribution_with<T: Scalar>(
    captions: &[Embedding<T>],
    delta: Option<&TransitionVector<T>>,
    opts: FusionOptions,
) -> Result<CaptionDistribution<T>> {
    let dim = captions.first().ok_or(Error::EmptyCaptionSet)?.dim();
    for c in captions {
        check_dims(dim, c.dim())?;
    }
    match delta {
        None => {
            let pre_norms = captions.iter().map(Embedding::norm).collect();
            let points = captions
                .iter()
                .map(Embedding::renormalized)
                .collect::<Result<Vec<_>>>()?;
            Ok(CaptionDistribution { points, fused: false, alpha: None, pre_norms })
        }
        Some(delta) => {
            let mut points = Vec::with_capacity(captions.len());
            let mut pre_norms = Vec::with_capacity(captions.len());
            for c in captions {
                let f = apply_transition_with(c, delta, opts)?;
                points.push(f.embedding);
                pre_norms.push(f.pre_norm);
            }
            Ok(CaptionDistribution { points, fused: true, alpha: Some(opts.alpha), pre_norms })
        }
    }
}
