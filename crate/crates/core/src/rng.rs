//! Counter-based random streams.
//!
//! Every variate is a pure function of `(seed, domain, lane, step)` and its
//! position in the stream: the first three select a ChaCha8 key and `step`
//! selects the ChaCha stream. Streams can therefore be drawn in any order,
//! or in parallel, without changing the result.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Which part of the computation a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    /// Driving noise of the state dynamics.
    Transition = 1,
    /// Measurement noise.
    Observation = 2,
    /// Ancestor selection, one lane per block.
    Resample = 3,
    /// Draws from the initial distribution.
    Initial = 4,
}

/// Key of a family of streams indexed by step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub domain: Domain,
    pub lane: u64,
}

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

impl StreamKey {
    pub const fn new(seed: u64, domain: Domain, lane: u64) -> Self {
        StreamKey { seed, domain, lane }
    }

    /// Same seed and domain, different lane.
    pub const fn with_lane(self, lane: u64) -> Self {
        StreamKey { lane, ..self }
    }

    fn stream(&self, step: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(self.domain as u64).to_le_bytes());
        key[16..24].copy_from_slice(&self.lane.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        rng
    }

    /// Fills `out` with the first `out.len()` standard normals of stream
    /// `step` (ziggurat method). A shorter fill is a prefix of a longer one.
    pub fn fill_normals(&self, step: u64, out: &mut [f64]) {
        let mut rng = self.stream(step);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    /// Uniforms on `[0, 1)`; uniform `i` is built from 64-bit word `i`.
    pub fn fill_uniforms(&self, step: u64, start: u64, out: &mut [f64]) {
        let mut rng = self.stream(step);
        rng.set_word_pos(u128::from(start) * 2);
        for u in out.iter_mut() {
            *u = (rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        }
    }
}
