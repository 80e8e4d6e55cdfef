//! Deterministic seed streams.
//!
//! Per-item randomness is derived from `(base seed, item index)` so parallel
//! and sequential runs draw identical values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th item of a stream rooted at `base`.
pub fn derive(base: u64, index: u64) -> u64 {
    mix(mix(base) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn item_rng(base: u64, index: u64) -> ChaCha8Rng {
    rng(derive(base, index))
}
