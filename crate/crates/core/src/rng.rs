//! Seed derivation.
//!
//! Every random stream in the crate is derived from one 64-bit base seed by
//! hashing it together with a short list of counters (setting index, trial
//! index, ...). The hash is SplitMix64 applied in sequence, so the derived seed
//! for `(base, [a, b])` is `mix(mix(base ^ mix(a)) ^ mix(b))`. Streams derived
//! this way do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for the stream identified by `(base, counters)`.
pub fn stream(base: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, counters))
}
