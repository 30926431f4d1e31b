//! Reproducible random streams derived from a user seed and stream tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit key for the stream identified by `seed` and `tags`.
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

/// Independent generator for `(seed, tags...)`; the same inputs always give
/// the same stream regardless of thread scheduling.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, tags))
}

/// Stream tags used across the crate.
pub mod tag {
    pub const CENSOR_TUNING: u64 = 1;
    pub const DATASET: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const CHAIN: u64 = 4;
}
