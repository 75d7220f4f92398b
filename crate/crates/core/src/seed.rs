//! Seed derivation. Every stochastic component draws from its own stream,
//! derived from one root seed so runs are reproducible end to end.

use sha2::{Digest, Sha256};

/// Seed for the component named `label`, independent of every other label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub(crate) fn is_zero(v: &u64) -> bool {
    *v == 0
}

/// Cheap per-item sub-seed (splitmix64 finalizer over `seed ^ index`).
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
