//! Quasi-random sample points in a box.
//!
//! Halton sequences with a seeded Cranley-Patterson shift: low discrepancy,
//! fully reproducible from the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SAMPLES: usize = 200;
pub const DEFAULT_SEED: u64 = 7;

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    out
}

/// An axis-aligned sampling box.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(bounds: &[(f64, f64)]) -> SampleBox {
        SampleBox {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Concatenation of two boxes.
    pub fn join(&self, other: &SampleBox) -> SampleBox {
        SampleBox {
            lo: self.lo.iter().chain(&other.lo).copied().collect(),
            hi: self.hi.iter().chain(&other.hi).copied().collect(),
        }
    }

    /// `n` shifted Halton points, reproducible from `seed`.
    pub fn halton(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.dim();
        assert!(d <= PRIMES.len(), "sampling dimension {d} exceeds prime table");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let u = (radical_inverse(i as u64 + 1, PRIMES[j]) + shift[j]).fract();
                        self.lo[j] + (self.hi[j] - self.lo[j]) * u
                    })
                    .collect()
            })
            .collect()
    }

    /// `n` independent uniform points.
    pub fn uniform(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..self.dim())
                    .map(|j| rng.random_range(self.lo[j]..self.hi[j]))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_stays_in_box_and_is_reproducible() {
        let b = SampleBox::new(&[(-2.0, 2.0), (0.1, 1.4)]);
        let a = b.halton(200, 3);
        assert_eq!(a, b.halton(200, 3));
        assert_ne!(a, b.halton(200, 4));
        for p in &a {
            assert!(p[0] >= -2.0 && p[0] < 2.0 && p[1] >= 0.1 && p[1] < 1.4);
        }
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(4, 2), 0.125);
    }

    #[test]
    fn halton_covers_unit_interval_evenly() {
        let b = SampleBox::new(&[(0.0, 1.0)]);
        let pts = b.halton(1000, 0);
        let mean: f64 = pts.iter().map(|p| p[0]).sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.01);
    }
}
