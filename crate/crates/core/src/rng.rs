//! Seeded randomness shared by every stochastic step.
//!
//! All streams derive from a 64-bit seed plus a stream tag so that distinct
//! consumers (adapter init, augmentation, clustering seeds) never share draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator for `(seed, stream)`; identical arguments give identical streams.
pub fn stream(seed: u64, stream: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(stream)))
}

pub fn uniform(rng: &mut DetRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal(rng: &mut DetRng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Uniform index in `0..n`.
pub fn index(rng: &mut DetRng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut DetRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
