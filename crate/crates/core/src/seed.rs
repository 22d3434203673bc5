//! Seed derivation, uniform sampling and low-discrepancy points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-task seed: `seed XOR hash(task)`. Stable regardless of scheduling.
pub fn derive_seed(seed: u64, task: u64) -> u64 {
    seed ^ splitmix64(task)
}

/// Uniform point in the box `[lo_i, hi_i]`.
pub fn uniform_in(rng: &mut SeededRng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| {
            let u: f64 = rng.random();
            l + u * (h - l)
        })
        .collect()
}

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

/// Halton point `index` (0-based, the origin is skipped) in `[0,1)^dim`.
///
/// # Panics
/// If `dim` exceeds the number of tabulated primes (24).
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton: at most {} dimensions", PRIMES.len());
    PRIMES[..dim]
        .iter()
        .map(|&b| radical_inverse(index as u64 + 1, b))
        .collect()
}
