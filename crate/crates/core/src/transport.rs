//! Set-to-set distances between uniform discrete distributions of embeddings.
//!
//! Three distances are provided:
//!
//! - [`ct_distance`]: bidirectional conditional transport. Each direction uses
//!   a closed-form plan, a row softmax of similarities over the destination
//!   set, so no iterative solve is involved.
//! - [`sinkhorn_ot`]: entropic optimal transport with uniform marginals, solved
//!   with log-domain Sinkhorn updates. Used as the comparator.
//! - [`mean_cosine_distance`]: cosine distance between the normalized set means,
//!   the point-to-point baseline.
//!
//! The transport cost is cosine distance `c = 1 - s` with `s` the clamped inner
//! product. Softmax rows are always max-subtracted.

use ndarray::Array2;

use crate::embedding::{check_dims, normalize_f64_with_norm, Embedding};
use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};
use crate::transition::CaptionDistribution;

/// Default softmax temperature for conditional transport plans.
pub const DEFAULT_TAU: f64 = 0.1;

/// A set of embeddings carrying implicit uniform mass.
pub trait PointSet<T: Scalar> {
    fn points(&self) -> &[Embedding<T>];

    fn dim(&self) -> usize {
        self.points()[0].dim()
    }
}

impl<T: Scalar> PointSet<T> for CaptionDistribution<T> {
    fn points(&self) -> &[Embedding<T>] {
        CaptionDistribution::points(self)
    }
}

/// A target image embedding followed by its augmentation embeddings, uniform mass `1/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution<T: Scalar> {
    points: Vec<Embedding<T>>,
}

impl<T: Scalar> TargetDistribution<T> {
    pub fn from_points(points: Vec<Embedding<T>>) -> Result<Self> {
        let dim = points.first().ok_or(Error::EmptyTargetSet)?.dim();
        for p in &points {
            check_dims(dim, p.dim())?;
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keep only the first `m` points (all of them if `m` exceeds the size).
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyTargetSet);
        }
        Ok(Self { points: self.points.iter().take(m).cloned().collect() })
    }
}

impl<T: Scalar> PointSet<T> for TargetDistribution<T> {
    fn points(&self) -> &[Embedding<T>] {
        &self.points
    }
}

/// K×M matrix of pairwise cosine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    c: Array2<f64>,
}

impl CostMatrix {
    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.c[[k, m]]
    }

    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn cols(&self) -> usize {
        self.c.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn mean(&self) -> f64 {
        self.c.iter().sum::<f64>() / self.c.len() as f64
    }

    /// Build from explicit entries; used for solving on a known cost.
    pub fn from_array(c: Array2<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::InvalidParameter("empty cost matrix".into()));
        }
        if let Some(index) = c.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { c })
    }
}

/// Row-stochastic conditional plans in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// K×M, `forward[[k, m]]` is the probability of moving caption k to target point m.
    pub forward: Array2<f64>,
    /// M×K, `backward[[m, k]]` is the probability of moving target point m to caption k.
    pub backward: Array2<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub cost: CostMatrix,
    pub plan: TransportPlan,
    pub forward_cost: f64,
    pub backward_cost: f64,
    pub l_bi: f64,
}

/// How the two directional sums are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Expectation under the uniform source masses: divide by K and M.
    #[default]
    Expectation,
    /// Plain double sums over all (k, m) pairs.
    RawSum,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::NonPositiveTau(tau));
    }
    Ok(())
}

fn check_pair<T: Scalar>(p: &[Embedding<T>], q: &[Embedding<T>]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyCaptionSet);
    }
    if q.is_empty() {
        return Err(Error::EmptyTargetSet);
    }
    check_dims(p[0].dim(), q[0].dim())
}

/// Clamped similarities, row-major K×M, written into `out`.
fn similarities<T: Scalar>(p: &[Embedding<T>], q: &[Embedding<T>], out: &mut Vec<f64>) {
    out.clear();
    for a in p {
        for b in q {
            out.push(scalar::dot(a.values(), b.values()).clamp(-1.0, 1.0));
        }
    }
}

pub fn cost_matrix<T: Scalar>(p: &impl PointSet<T>, q: &impl PointSet<T>) -> Result<CostMatrix> {
    let (p, q) = (p.points(), q.points());
    check_pair(p, q)?;
    let mut sim = Vec::with_capacity(p.len() * q.len());
    similarities(p, q, &mut sim);
    let c = Array2::from_shape_vec((p.len(), q.len()), sim.into_iter().map(|s| 1.0 - s).collect())
        .expect("shape matches");
    Ok(CostMatrix { c })
}

/// Directional transport sums over a row-major similarity matrix.
///
/// Returns `(sum_k sum_m fwd[k,m] c[k,m], sum_m sum_k bwd[m,k] c[k,m])`.
/// Plans are written when buffers are provided.
fn ct_sums(
    sim: &[f64],
    k: usize,
    m: usize,
    tau: f64,
    mut fwd: Option<&mut [f64]>,
    mut bwd: Option<&mut [f64]>,
    weights: &mut Vec<f64>,
) -> (f64, f64) {
    let inv_tau = 1.0 / tau;

    let mut forward = 0.0;
    weights.resize(m.max(k), 0.0);
    for row in 0..k {
        let s = &sim[row * m..(row + 1) * m];
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &v) in s.iter().enumerate() {
            let w = ((v - mx) * inv_tau).exp();
            weights[j] = w;
            z += w;
        }
        let mut acc = 0.0;
        for (j, &v) in s.iter().enumerate() {
            let pi = weights[j] / z;
            acc += pi * (1.0 - v);
            if let Some(f) = fwd.as_deref_mut() {
                f[row * m + j] = pi;
            }
        }
        forward += acc;
    }

    let mut backward = 0.0;
    for col in 0..m {
        let mut mx = f64::NEG_INFINITY;
        for row in 0..k {
            mx = mx.max(sim[row * m + col]);
        }
        let mut z = 0.0;
        for row in 0..k {
            let w = ((sim[row * m + col] - mx) * inv_tau).exp();
            weights[row] = w;
            z += w;
        }
        let mut acc = 0.0;
        for row in 0..k {
            let pi = weights[row] / z;
            acc += pi * (1.0 - sim[row * m + col]);
            if let Some(b) = bwd.as_deref_mut() {
                b[col * k + row] = pi;
            }
        }
        backward += acc;
    }
    (forward, backward)
}

fn weigh(sums: (f64, f64), k: usize, m: usize, weighting: Weighting) -> (f64, f64) {
    match weighting {
        Weighting::Expectation => (sums.0 / k as f64, sums.1 / m as f64),
        Weighting::RawSum => sums,
    }
}

/// Bidirectional conditional transport distance with full diagnostics.
pub fn ct_distance<T: Scalar>(
    p: &impl PointSet<T>,
    q: &impl PointSet<T>,
    tau: f64,
) -> Result<TransportResult> {
    ct_distance_weighted(p, q, tau, Weighting::Expectation)
}

pub fn ct_distance_weighted<T: Scalar>(
    p: &impl PointSet<T>,
    q: &impl PointSet<T>,
    tau: f64,
    weighting: Weighting,
) -> Result<TransportResult> {
    check_tau(tau)?;
    let (pp, qq) = (p.points(), q.points());
    check_pair(pp, qq)?;
    let (k, m) = (pp.len(), qq.len());
    let mut sim = Vec::with_capacity(k * m);
    similarities(pp, qq, &mut sim);
    let mut fwd = vec![0.0; k * m];
    let mut bwd = vec![0.0; m * k];
    let mut scratch = Vec::new();
    let sums = ct_sums(&sim, k, m, tau, Some(&mut fwd), Some(&mut bwd), &mut scratch);
    let (forward_cost, backward_cost) = weigh(sums, k, m, weighting);
    let c = Array2::from_shape_vec((k, m), sim.iter().map(|s| 1.0 - s).collect())
        .expect("shape matches");
    Ok(TransportResult {
        cost: CostMatrix { c },
        plan: TransportPlan {
            forward: Array2::from_shape_vec((k, m), fwd).expect("shape matches"),
            backward: Array2::from_shape_vec((m, k), bwd).expect("shape matches"),
            tau,
        },
        forward_cost,
        backward_cost,
        l_bi: forward_cost + backward_cost,
    })
}

/// Reusable buffers for scoring many pairs without reallocating.
#[derive(Debug, Default)]
pub struct CtScratch {
    sim: Vec<f64>,
    weights: Vec<f64>,
}

/// Scalar `l_bi` only; no plans are materialized.
pub fn ct_lbi<T: Scalar>(
    p: &[Embedding<T>],
    q: &[Embedding<T>],
    tau: f64,
    weighting: Weighting,
    scratch: &mut CtScratch,
) -> Result<f64> {
    check_tau(tau)?;
    check_pair(p, q)?;
    similarities(p, q, &mut scratch.sim);
    let sums = ct_sums(&scratch.sim, p.len(), q.len(), tau, None, None, &mut scratch.weights);
    let (f, b) = weigh(sums, p.len(), q.len(), weighting);
    Ok(f + b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self { epsilon: 0.05, max_iters: 1000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// `sum(plan * c)`.
    pub cost: f64,
    pub plan: Array2<f64>,
    pub iters_used: usize,
    /// False when `max_iters` was reached first; reported, not an error.
    pub converged: bool,
    /// L1 deviation of row sums from `1/K` plus column sums from `1/M`.
    pub marginal_error: f64,
}

/// Entropic OT between two uniform distributions.
pub fn sinkhorn_ot<T: Scalar>(
    p: &impl PointSet<T>,
    q: &impl PointSet<T>,
    params: SinkhornParams,
) -> Result<SinkhornResult> {
    check_sinkhorn(params)?;
    let c = cost_matrix(p, q)?;
    sinkhorn_on_cost(&c, params)
}

fn check_sinkhorn(params: SinkhornParams) -> Result<()> {
    if !(params.epsilon > 0.0) || !params.epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(params.epsilon));
    }
    if params.max_iters == 0 {
        return Err(Error::InvalidParameter("sinkhorn max_iters must be at least 1".into()));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("sinkhorn tol must be positive, got {}", params.tol)));
    }
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn on a given cost matrix with uniform marginals.
///
/// Dual potentials are kept in units of `eps`: `u` (rows) and `v` (columns)
/// are updated alternately and the plan is `exp(u_i + v_j - c_ij / eps)`.
pub fn sinkhorn_on_cost(cost: &CostMatrix, params: SinkhornParams) -> Result<SinkhornResult> {
    check_sinkhorn(params)?;
    let (k, m) = cost.c.dim();
    let scaled: Vec<f64> = cost.c.iter().map(|c| c / params.epsilon).collect();
    let s = |i: usize, j: usize| scaled[i * m + j];
    let (a, b) = (1.0 / k as f64, 1.0 / m as f64);
    let (log_a, log_b) = (a.ln(), b.ln());
    let mut u = vec![0.0; k];
    let mut v = vec![0.0; m];
    let mut cols = vec![0.0; m];

    let mut iters_used = 0;
    let mut converged = false;
    let mut err = f64::INFINITY;
    while iters_used < params.max_iters {
        iters_used += 1;
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = log_a - log_sum_exp((0..m).map(|j| v[j] - s(i, j)));
        }
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = log_b - log_sum_exp((0..k).map(|i| u[i] - s(i, j)));
        }
        // L1 marginal error of the current plan
        err = 0.0;
        cols.fill(0.0);
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..m {
                let p = (u[i] + v[j] - s(i, j)).exp();
                row += p;
                cols[j] += p;
            }
            err += (row - a).abs();
        }
        err += cols.iter().map(|c| (c - b).abs()).sum::<f64>();
        if err <= params.tol {
            converged = true;
            break;
        }
    }

    let plan = Array2::from_shape_fn((k, m), |(i, j)| (u[i] + v[j] - s(i, j)).exp());
    let total = (&plan * &cost.c).sum();
    Ok(SinkhornResult { cost: total, plan, iters_used, converged, marginal_error: err })
}

/// Cosine distance between the normalized means of the two sets.
pub fn mean_cosine_distance<T: Scalar>(p: &impl PointSet<T>, q: &impl PointSet<T>) -> Result<f64> {
    let (p, q) = (p.points(), q.points());
    check_pair(p, q)?;
    let mp: Vec<f64> = normalize_f64_with_norm::<f64>(&mean(p))?.0;
    let mq: Vec<f64> = normalize_f64_with_norm::<f64>(&mean(q))?.0;
    Ok(1.0 - scalar::dot(&mp, &mq).clamp(-1.0, 1.0))
}

fn mean<T: Scalar>(points: &[Embedding<T>]) -> Vec<f64> {
    let d = points[0].dim();
    let mut acc = vec![0.0; d];
    for p in points {
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += v.to_f64_lossy();
        }
    }
    let n = points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}
