//! Deterministic low-discrepancy sampling over axis-aligned boxes.
//!
//! Points are drawn from a Halton sequence with a seeded Cranley-Patterson
//! rotation. The sequence is prefix-stable: the first `N` points for a given
//! seed are the same regardless of how many are requested later, so suprema
//! estimated over growing sample counts never decrease.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::{lit, Scalar};

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv_base = 1.0 / base as f64;
    let mut factor = inv_base;
    let mut value = 0.0;
    while index > 0 {
        value += (index % base) as f64 * factor;
        index /= base;
        factor *= inv_base;
    }
    value
}

/// Rotated Halton sequence in the unit cube `[0, 1)^dim`.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    shift: Vec<f64>,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1 && dim <= PRIMES.len(), "Halton dimension {dim} unsupported");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = (0..dim).map(|_| rng.gen::<f64>()).collect();
        Halton { dim, shift, next: 1 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the next point into `out`.
    pub fn next_into(&mut self, out: &mut [f64]) {
        let i = self.next;
        self.next += 1;
        for (k, o) in out.iter_mut().enumerate().take(self.dim) {
            let v = radical_inverse(i, PRIMES[k]) + self.shift[k];
            *o = if v >= 1.0 { v - 1.0 } else { v };
        }
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> T {
        self.lo
            .iter()
            .zip(&self.hi)
            .fold(T::zero(), |acc, (&a, &b)| acc + (b - a) * (b - a))
            .sqrt()
    }

    /// Maps a unit-cube point onto the box.
    pub fn map_unit(&self, unit: &[f64], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = self.hi[k] - self.lo[k];
            *o = self.lo[k] + w * lit::<T>(unit[k]);
        }
    }

    /// Uniform grid with `per_axis` points along every axis, visited in
    /// row-major order. `index` must be below `per_axis^dim`.
    pub fn grid_point(&self, per_axis: usize, mut index: usize, out: &mut [T]) {
        let denom = lit::<T>((per_axis.max(2) - 1) as f64);
        for (k, o) in out.iter_mut().enumerate() {
            let i = index % per_axis;
            index /= per_axis;
            let frac = if per_axis == 1 { lit(0.5) } else { lit::<T>(i as f64) / denom };
            *o = self.lo[k] + (self.hi[k] - self.lo[k]) * frac;
        }
    }
}

/// Unit directions covering the sphere: coordinate axes, all sign diagonals
/// (up to dimension 10) and `extra` Halton directions.
pub fn probe_directions<T: Scalar>(dim: usize, extra: usize) -> Vec<Vec<T>> {
    let mut dirs = Vec::new();
    for k in 0..dim {
        for sign in [1.0, -1.0] {
            let mut d = vec![T::zero(); dim];
            d[k] = lit(sign);
            dirs.push(d);
        }
    }
    if (2..=10).contains(&dim) {
        let scale = lit::<T>(1.0 / (dim as f64).sqrt());
        for mask in 0..(1u32 << dim) {
            let d = (0..dim)
                .map(|k| if mask & (1 << k) != 0 { -scale } else { scale })
                .collect();
            dirs.push(d);
        }
    }
    let mut seq = Halton::new(dim, 0x5eed);
    let mut unit = vec![0.0; dim];
    while dirs.len() < 2 * dim + extra {
        seq.next_into(&mut unit);
        let v: Vec<f64> = unit.iter().map(|u| 2.0 * u - 1.0).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            dirs.push(v.iter().map(|a| lit(a / n)).collect());
        }
    }
    dirs
}

/// Splitmix-style index scrambler for deterministic partner selection.
#[inline]
pub(crate) fn mix(index: u64) -> u64 {
    let mut z = index.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
