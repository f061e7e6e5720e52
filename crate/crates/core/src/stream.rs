//! Keyed random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha generator whose
//! seed is a pure function of a key tuple, e.g. `(master seed, stream id,
//! unit, period)` for population draws or `(master seed, grid point, design,
//! replicate)` for experiment replications. Results therefore never depend
//! on evaluation order or on how many worker threads are used.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A point in the key space. Cheap to copy and extend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        StreamKey(splitmix(master_seed ^ 0x5357_4c41_4253_3031))
    }

    /// Child key; distinct `(parent, tag)` pairs give unrelated children.
    #[inline]
    pub fn child(self, tag: u64) -> Self {
        StreamKey(splitmix(self.0 ^ splitmix(tag.wrapping_add(0xa076_1d64_78bd_642f))))
    }

    pub fn children(self, tags: &[u64]) -> Self {
        tags.iter().fold(self, |k, &t| k.child(t))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Generator seeded from this key.
    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut z = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Stream identifiers for population ingredients.
pub mod ids {
    pub const POPULATION: u64 = 1;
    pub const EXPERIMENT: u64 = 2;
    pub const RANDOMIZATION_INFERENCE: u64 = 3;

    pub const COVARIATE: u64 = 10;
    pub const NOISE: u64 = 11;
    pub const INITIAL: u64 = 12;
    pub const BERNOULLI_1: u64 = 13;
    pub const BERNOULLI_2: u64 = 14;
    pub const BERNOULLI_3: u64 = 15;
    pub const UNIT_FACTOR: u64 = 16;
    pub const TIME_FACTOR: u64 = 17;
    pub const RESIDUAL: u64 = 18;
    pub const STATE_SHOCK: u64 = 19;
    pub const OUTCOME_SHOCK: u64 = 20;
}
