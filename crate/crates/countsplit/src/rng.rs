//! Seed derivation and stream construction.
//!
//! Every random quantity flows from one user seed through `derive`, so each
//! unit of work (a replicate, a permutation, a restart) owns an independent
//! reproducible stream and results do not depend on thread count or
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags for derived streams. Values are arbitrary but frozen: changing
/// them changes every downstream draw.
pub mod tag {
    pub const SPLIT: u64 = 0x01;
    pub const LATENT: u64 = 0x02;
    pub const ESTIMATOR: u64 = 0x03;
    pub const PERMUTE: u64 = 0x04;
    pub const SUBSAMPLE: u64 = 0x05;
    pub const COUNTS: u64 = 0x06;
    pub const SIZE_FACTORS: u64 = 0x07;
    pub const REPLICATE: u64 = 0x08;
    pub const RESTART: u64 = 0x09;
    pub const COLUMNS: u64 = 0x0a;
    pub const OBSERVED: u64 = 0x0b;
    pub const SWEEP: u64 = 0x0c;
    pub const METHOD: u64 = 0x0d;
    pub const SCENARIO: u64 = 0x0e;
}

/// SplitMix64 finalizer over `base` xor a golden-ratio multiple of `tag`.
/// Bijective in `tag` for fixed `base`, so distinct tags give distinct seeds.
pub fn derive(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}

pub fn derive3(base: u64, a: u64, b: u64, c: u64) -> u64 {
    derive(derive2(base, a, b), c)
}

/// A ChaCha8 stream for the given derived seed. ChaCha's output sequence is
/// specified by the algorithm, so draws are stable across platforms.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_spreads() {
        assert_eq!(derive(7, 1), derive(7, 1));
        assert_ne!(derive(7, 1), derive(7, 2));
        assert_ne!(derive(7, 1), derive(8, 1));
        // Distinct tags never collide for a fixed base (bijection check on a range).
        let base = 0xdead_beef;
        let mut seen: std::collections::HashSet<u64> = std::collections::HashSet::new();
        for t in 0..10_000u64 {
            assert!(seen.insert(derive(base, t)));
        }
    }

    #[test]
    fn streams_are_reproducible() {
        use rand::RngCore;
        let mut a = stream(42);
        let mut b = stream(42);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
