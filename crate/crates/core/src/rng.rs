//! Reproducible noise streams.
//!
//! Every random draw is keyed by a [`SeedSpec`]: the master seed fixes a
//! ChaCha8 key and the stream id selects one of its 2^64 independent
//! counter-mode streams. Work items own their stream, so results never depend
//! on how a batch is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self { master_seed, stream_id }
    }

    /// Stream `index` of a fresh key derived from this spec.
    ///
    /// Children of distinct specs live under distinct keys, so nested work
    /// (trajectory -> replanning step -> rollout) never shares a stream.
    pub fn child(&self, index: u64) -> SeedSpec {
        let key = splitmix64(splitmix64(self.master_seed) ^ self.stream_id.rotate_left(17));
        SeedSpec { master_seed: key, stream_id: index }
    }

    pub fn stream(&self) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        NoiseStream { rng }
    }
}

/// Gaussian source bound to one seed stream.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Three independent Brownian increments over a step with `sqrt(dt) = sqrt_dt`.
    #[inline]
    pub fn brownian_increment(&mut self, sqrt_dt: f64) -> [f64; 3] {
        [
            sqrt_dt * self.standard_normal(),
            sqrt_dt * self.standard_normal(),
            sqrt_dt * self.standard_normal(),
        ]
    }
}
