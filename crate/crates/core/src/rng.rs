//! Reproducible per-sample randomness.
//!
//! Sample `s` of a batch draws from ChaCha8 keyed by the master seed with
//! stream `s`, so results do not depend on how a batch is split across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn open_unit(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// `d` independent open uniforms for sample `index`.
pub fn uniforms(seed: u64, index: u64, d: usize) -> Vec<f64> {
    let mut rng = sample_rng(seed, index);
    (0..d).map(|_| open_unit(&mut rng)).collect()
}
