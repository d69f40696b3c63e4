//! Portable seeded random stream.
//!
//! The generator is PCG XSL RR 128/64 (`pcg64`) initialized with
//! `state = seed` and the reference default stream increment. Derived draws:
//!
//! - `uniform`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`.
//! - `gaussian`: Box–Muller on two uniforms `u1, u2`, using `1 - u1` to stay
//!   off zero. The cosine branch is returned first and the sine branch is
//!   cached for the next call.
//! - `below(n)`: `(next_u64 * n) >> 64` in 128-bit arithmetic.

use rand_core::RngCore;
use rand_pcg::Pcg64;

/// Default stream increment of the reference pcg64 implementation.
const PCG_DEFAULT_STREAM: u128 = 0xa02b_dbf7_bb3c_0a7a_c28f_a16a_64ab_f96;

#[derive(Debug, Clone)]
pub struct SynthRng {
    inner: Pcg64,
    spare: Option<f64>,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: Pcg64::new(seed as u128, PCG_DEFAULT_STREAM), spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.gaussian()).collect()
    }

    /// Uniform direction on the unit sphere.
    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v = self.gaussian_vec(d);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// Fisher–Yates, last index first.
    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SynthRng::new(42);
        let mut b = SynthRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
        assert_ne!(SynthRng::new(1).next_u64(), SynthRng::new(2).next_u64());
    }

    #[test]
    fn gaussian_moments() {
        let mut r = SynthRng::new(9);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn uniform_and_below_ranges() {
        let mut r = SynthRng::new(5);
        let mut counts = [0usize; 7];
        for _ in 0..70_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            counts[r.below(7)] += 1;
        }
        for c in counts {
            assert!((9_000..11_000).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn unit_vectors_are_unit() {
        let mut r = SynthRng::new(1);
        for d in [2, 3, 64] {
            let v = r.unit_vector(d);
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
