//! Deterministic random sampling.
//!
//! All randomness in the crate flows through a ChaCha20 stream keyed by a
//! 64-bit seed, so every artifact (instances, Monte-Carlo support sets) is
//! bit-reproducible from its seed alone. Standard normals are drawn with the
//! Marsaglia polar method over 53-bit uniforms, which keeps the sampler
//! self-contained and platform-stable instead of depending on a distribution
//! crate's internal algorithm choices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::Float;

/// Seeded generator for instance data.
pub struct SeededRng {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal via the Marsaglia polar method. Pairs are generated
    /// together; the second sample is cached for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let a = 2.0 * self.uniform() - 1.0;
            let b = 2.0 * self.uniform() - 1.0;
            let s = a * a + b * b;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(b * m);
                return a * m;
            }
        }
    }

    /// Fills a slice with i.i.d. `N(0, scale^2)` draws, in index order.
    /// `scale == 0` writes exact zeros while still consuming the same stream,
    /// so instances with different noise levels share the same design matrix.
    pub fn fill_normal<F: Float>(&mut self, out: &mut [F], scale: F) {
        for x in out.iter_mut() {
            let z = self.standard_normal();
            *x = if scale == F::zero() {
                F::zero()
            } else {
                scale * F::cast(z)
            };
        }
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }
}

/// SplitMix64 finalizer, used to derive independent per-cell seeds from a
/// base seed and cell coordinates without correlated streams.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for an experiment cell identified by `(base_seed, d, seed_index)`.
pub fn cell_seed(base_seed: u64, d: usize, seed_index: usize) -> u64 {
    let mut h = splitmix64(base_seed);
    h = splitmix64(h ^ d as u64);
    splitmix64(h ^ seed_index as u64)
}
