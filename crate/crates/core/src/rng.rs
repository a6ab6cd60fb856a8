//! Deterministic seed derivation.
//!
//! Every random decision in the crate flows from a `u64` seed through
//! [`derive_seed`] into a ChaCha8 stream. Derivation depends only on the
//! seed and the declared purpose tags, never on incidental call order, so
//! two call sites that derive the same (seed, tags) pair see the same
//! stream. Stage seeds in the transfer module rely on this to make equal
//! stage prefixes produce bit-identical networks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; a solid mixer for seed derivation.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of purpose tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ t);
    }
    s
}

/// A ChaCha8 stream for the given derived seed.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags, one per random decision site. Keeping them distinct keeps
/// the derived streams independent of each other.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const REINIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const DATA: u64 = 6;
    pub const STAGE: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_deterministic() {
        assert_eq!(derive_seed(42, &[1, 2]), derive_seed(42, &[1, 2]));
        assert_ne!(derive_seed(42, &[1, 2]), derive_seed(42, &[2, 1]));
        assert_ne!(derive_seed(42, &[1]), derive_seed(43, &[1]));
    }

    #[test]
    fn streams_from_equal_seeds_match() {
        let mut a = stream(derive_seed(7, &[3]));
        let mut b = stream(derive_seed(7, &[3]));
        for _ in 0..16 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}
