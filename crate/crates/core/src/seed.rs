//! Deterministic seed derivation for independent RNG streams.
//!
//! Every stochastic step in the pipeline (population init, per-round trade
//! ordering, mutation, test-time scoring) draws from its own ChaCha stream
//! whose seed is derived from the master seed plus a stable tag sequence.
//! The mixing is platform-independent, so a fixed master seed reproduces
//! byte-identical outputs regardless of thread count or architecture.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag: population initialization.
pub const STREAM_INIT: u64 = 0x494e4954; // "INIT"
/// Stream tag: one training market (mixed with generation and claim id).
pub const STREAM_TRAIN_MARKET: u64 = 0x54524d4b; // "TRMK"
/// Stream tag: selection and reproduction for one generation.
pub const STREAM_REPRODUCE: u64 = 0x5245504f; // "REPO"
/// Stream tag: one test-time scoring market (mixed with claim id).
pub const STREAM_SCORE_MARKET: u64 = 0x53434d4b; // "SCMK"

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// FNV-1a over UTF-8 bytes; used to fold claim ids into seed material.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derives a child seed from a master seed and a sequence of stream parts.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for p in parts {
        state = splitmix64(state ^ *p);
    }
    state
}

/// Builds the RNG for a derived stream.
pub fn stream_rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}
