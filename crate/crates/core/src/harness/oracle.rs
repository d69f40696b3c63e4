//! Brute-force reference computations.
//!
//! These deliberately share no code with the transport module: plain nested
//! loops over `Vec<Vec<f64>>`, no row-max softmax shift, no matrix types.

use crate::error::{Error, Result};

/// Cosine-distance matrix by explicit triple loop, similarities clamped to `[-1, 1]`.
pub fn naive_cost(p: &[Vec<f64>], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; q.len()]; p.len()];
    for k in 0..p.len() {
        for m in 0..q.len() {
            let mut s = 0.0;
            for i in 0..p[k].len() {
                s += p[k][i] * q[m][i];
            }
            if s > 1.0 {
                s = 1.0;
            }
            if s < -1.0 {
                s = -1.0;
            }
            c[k][m] = 1.0 - s;
        }
    }
    c
}

/// Bidirectional conditional transport distance, expectation form.
///
/// Exponentials are shifted by the constant `1/tau` (similarities never exceed
/// one), which is exact but loses everything below `exp(-745)`; keep
/// `tau >= 1e-3` when using this as a reference.
pub fn ct_oracle(p: &[Vec<f64>], q: &[Vec<f64>], tau: f64) -> f64 {
    ct_oracle_weighted(p, q, tau, false)
}

pub fn ct_oracle_weighted(p: &[Vec<f64>], q: &[Vec<f64>], tau: f64, raw_sum: bool) -> f64 {
    let c = naive_cost(p, q);
    let kk = p.len();
    let mm = q.len();

    let mut forward = 0.0;
    for k in 0..kk {
        let mut denom = 0.0;
        for m in 0..mm {
            denom += (-c[k][m] / tau).exp();
        }
        for m in 0..mm {
            let pi = (-c[k][m] / tau).exp() / denom;
            forward += pi * c[k][m];
        }
    }

    let mut backward = 0.0;
    for m in 0..mm {
        let mut denom = 0.0;
        for k in 0..kk {
            denom += (-c[k][m] / tau).exp();
        }
        for k in 0..kk {
            let pi = (-c[k][m] / tau).exp() / denom;
            backward += pi * c[k][m];
        }
    }

    if raw_sum {
        forward + backward
    } else {
        forward / kk as f64 + backward / mm as f64
    }
}

/// `tau -> 0` limit of the CT distance: mean row minimum plus mean column minimum.
pub fn ct_limit_small_tau(c: &[Vec<f64>]) -> f64 {
    let kk = c.len();
    let mm = c[0].len();
    let mut rows = 0.0;
    for row in c {
        rows += row.iter().copied().fold(f64::INFINITY, f64::min);
    }
    let mut cols = 0.0;
    for m in 0..mm {
        let mut best = f64::INFINITY;
        for row in c {
            best = best.min(row[m]);
        }
        cols += best;
    }
    rows / kk as f64 + cols / mm as f64
}

/// `tau -> infinity` limit of the CT distance: twice the mean cost.
pub fn ct_limit_large_tau(c: &[Vec<f64>]) -> f64 {
    let n = (c.len() * c[0].len()) as f64;
    2.0 * c.iter().flatten().sum::<f64>() / n
}

/// Exact OT with uniform marginals on a square problem of size at most 8,
/// by enumerating all permutations (the optimum of the assignment polytope
/// is attained at a vertex).
pub fn ot_oracle_exact(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    ot_oracle_exact_cost(&naive_cost(p, q))
}

pub fn ot_oracle_exact_cost(c: &[Vec<f64>]) -> Result<f64> {
    let k = c.len();
    let m = c.first().map_or(0, Vec::len);
    if k == 0 || k != m || k > 8 {
        return Err(Error::TooLargeForExactOt { k, m });
    }
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..k).collect();
    let mut visit = |perm: &[usize]| {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[i][j]).sum();
        best = best.min(total);
    };
    heap_permutations(&mut perm, k, &mut visit);
    Ok(best / k as f64)
}

/// Heap's algorithm, calling `visit` once for each of the `n!` orderings.
fn heap_permutations(xs: &mut [usize], n: usize, visit: &mut impl FnMut(&[usize])) {
    if n <= 1 {
        visit(xs);
        return;
    }
    for i in 0..n - 1 {
        heap_permutations(xs, n - 1, visit);
        if n % 2 == 0 {
            xs.swap(i, n - 1);
        } else {
            xs.swap(0, n - 1);
        }
    }
    heap_permutations(xs, n - 1, visit);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heap_visits_every_permutation_once() {
        let mut seen = std::collections::HashSet::new();
        let mut xs: Vec<usize> = (0..5).collect();
        heap_permutations(&mut xs, 5, &mut |p: &[usize]| {
            assert!(seen.insert(p.to_vec()));
        });
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn single_point_oracles() {
        let p = vec![vec![1.0, 0.0]];
        let q = vec![vec![0.6, 0.8]];
        assert!((ct_oracle(&p, &q, 0.1) - 0.8).abs() < 1e-12);
        assert!((ot_oracle_exact(&p, &q).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn anti_diagonal_cost_has_zero_ot() {
        let c = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(ot_oracle_exact_cost(&c).unwrap(), 0.0);
        let c = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(ot_oracle_exact_cost(&c).unwrap(), 0.0);
    }

    #[test]
    fn exact_ot_rejects_large_or_rectangular() {
        let c = vec![vec![0.0; 9]; 9];
        assert!(matches!(ot_oracle_exact_cost(&c), Err(Error::TooLargeForExactOt { k: 9, m: 9 })));
        let c = vec![vec![0.0; 3]; 2];
        assert!(matches!(ot_oracle_exact_cost(&c), Err(Error::TooLargeForExactOt { k: 2, m: 3 })));
    }

    #[test]
    fn limits_on_identity_example() {
        let p = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let c = naive_cost(&p, &p);
        assert_eq!(ct_limit_small_tau(&c), 0.0);
        assert_eq!(ct_limit_large_tau(&c), 1.0);
    }
}
