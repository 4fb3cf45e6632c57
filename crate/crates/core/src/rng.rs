//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! global seed and a tuple of counters (instance, attempt, start point, ...).
//! A stream depends only on its key, so the order in which workers run
//! cannot change any result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fold a sequence of counters into a single 64-bit tag.
pub fn mix(tags: &[u64]) -> u64 {
    tags.iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Deterministic stream for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
    rng.set_stream(mix(tags));
    rng
}

/// Domain tags keep streams used for different purposes apart.
pub mod domain {
    pub const DATASET: u64 = 1;
    pub const ROLLOUT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN_BATCH: u64 = 4;
    pub const TRAIN_ROLLOUT: u64 = 5;
    pub const REFERENCE: u64 = 6;
    pub const PROBE: u64 = 7;
}
