//! Seed derivation for reproducible sub-streams.
//!
//! Every randomized component draws from a ChaCha8 stream derived from the
//! run seed plus a stable textual tag, so adding a new consumer never shifts
//! the draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a 64-bit hash; stable across platforms and versions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A deterministic RNG for the given seed and purpose tag.
pub fn seeded(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(tag.as_bytes()))
}
