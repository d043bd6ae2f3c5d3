//! Deterministic RNG streams.
//!
//! Every stochastic component draws from its own named stream derived from
//! the run seed, so that e.g. changing the augmentation scheme does not
//! shift the dropout draws of an otherwise identical run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent, reproducible RNG stream from `seed` and a purpose tag.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    // FNV-1a over the tag; mixed with the seed via a splitmix-style constant.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(h.wrapping_add(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}
