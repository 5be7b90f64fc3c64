//! Seed derivation. Every random consumer gets its own ChaCha stream keyed
//! by `(seed, purpose, index)`, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_LHS: u64 = 1;
pub(crate) const TAG_ANNEAL: u64 = 2;
pub(crate) const TAG_FALLBACK: u64 = 3;
pub(crate) const TAG_BOOT_DATA: u64 = 10;
pub(crate) const TAG_BOOT_FIT: u64 = 11;
pub(crate) const TAG_BOOT_PRED: u64 = 12;
pub(crate) const TAG_SPLIT: u64 = 20;
pub(crate) const TAG_COMPLETE: u64 = 21;
pub(crate) const TAG_CV_FIT: u64 = 22;
pub(crate) const TAG_FLEET: u64 = 30;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub(crate) fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
