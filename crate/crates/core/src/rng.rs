//! Seed derivation for independent, reproducible random streams.
//!
//! Every consumer of randomness (weight init, minibatch shuffles, index draws,
//! per-sample acquisition draws, per-cluster selection) gets its own stream
//! keyed by a tuple of integers, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed and a key path.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k)))
}

/// A generator for the stream identified by `seed` and `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Stream tags, kept distinct so no two purposes share a stream.
pub(crate) mod tag {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const SCORE: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const WARM: u64 = 6;
}
