//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a parent seed and a path of integer coordinates, so streams
//! are independent of the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a coordinate path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(parent), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng(parent: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(parent, path))
}

/// Stream tags, so that e.g. the sensor and event streams of one
/// participant never share a seed.
pub mod tag {
    pub const PROFILE: u64 = 1;
    pub const SENSOR: u64 = 2;
    pub const EVENTS: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const BALANCE_TRAIN: u64 = 6;
    pub const BALANCE_TEST: u64 = 7;
    pub const ORDER: u64 = 8;
    pub const PERSONALIZE: u64 = 9;
}
