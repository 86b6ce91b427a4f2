//! Deterministic seed derivation.
//!
//! Every source of randomness in the lab is a ChaCha8 stream whose seed is
//! derived from a root seed plus a chain of context tags (task index, episode
//! index, step, ...). Derivation is a splittable counter scheme: no two
//! distinct tag chains collide in practice, and the same chain always yields
//! the same stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; the standard finalizer-quality mixer.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed and a chain of context tags.
pub fn derive(root: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(root);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Seeded ChaCha8 stream for the given root/tag chain.
pub fn rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tags))
}

/// Hash a string label into a tag, for readable derivation chains.
pub fn tag(label: &str) -> u64 {
    let mut s = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        s ^= b as u64;
        s = s.wrapping_mul(0x100_0000_01b3);
    }
    s
}
