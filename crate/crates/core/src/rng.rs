//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream (a keyed
//! counter-mode generator). Independent purposes (initialization, shuffling,
//! scene synthesis, degradation) derive their own stream from the user seed
//! and a purpose tag, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed for `purpose`/`index` from a root seed.
pub fn derive_seed(root: u64, purpose: &str, index: u64) -> u64 {
    let mut h = mix64(root);
    for b in purpose.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ index)
}

pub fn stream(root: u64, purpose: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, purpose, index))
}
