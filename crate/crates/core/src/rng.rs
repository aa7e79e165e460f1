//! Seeding conventions.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] (a counter-based
//! stream cipher generator with a portable, documented output sequence).
//! Child seeds are derived with the SplitMix64 finalizer:
//!
//! ```text
//! derive_seed(seed, index) = splitmix64(seed ^ splitmix64(index + 1))
//! ```
//!
//! so sibling streams (replicates, restarts, grid cells) never share a seed
//! for distinct indices and the derivation is reproducible on any platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 output function (Steele, Lea & Flood).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
