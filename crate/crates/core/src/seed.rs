//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed, a stream tag and an index.
pub fn derive(root: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(root ^ mix64(stream)) ^ index)
}

pub fn rng_for(root: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}

/// Stream tags used across the crate.
pub mod stream {
    pub const SPAWN: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const TRAIN_STEP: u64 = 3;
    pub const EVAL_SPAWN: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EAS: u64 = 6;
}
