//! Seeded randomness shared by weight initialization and data synthesis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::real::Real;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream from a base seed and a label, so that
/// generation of one item never depends on the order others were generated in.
pub fn derive(seed: u64, label: u64) -> SeededRng {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Standard normal sample by Box-Muller.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Uniform initialization in `±1/sqrt(fan_in)`.
pub fn init_uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> alloc::vec::Vec<T> {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    (0..n).map(|_| T::lit(uniform(rng, -bound, bound))).collect()
}
