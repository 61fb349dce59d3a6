//! Deterministic RNG streams.
//!
//! Every random decision in the toolkit draws from a ChaCha8 stream derived
//! from `(base seed, tag)`, so subsystems can't perturb each other by
//! consuming random numbers in a different order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives an independent stream for `tag` under `seed`.
pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, fnv1a(tag)))
}

/// Numeric variant for per-index derivation (epochs, subjects).
pub fn stream_n(seed: u64, tag: &str, n: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, fnv1a(tag)), n))
}

/// Child seed for a component that seeds itself (per-subject, per-view).
pub fn derive_seed(seed: u64, tag: &str, n: u64) -> u64 {
    mix(mix(seed, fnv1a(tag)), n)
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
