//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by a master
//! seed and a stream index, so parallel work is reproducible regardless of
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(master: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derive a child seed from a parent seed and a label, for nesting streams
/// (replication -> fold -> cross-validation split).
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the combined input
    let mut z = parent
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(label.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
