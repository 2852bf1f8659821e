//! Seeded random streams.
//!
//! Every random draw comes from a ChaCha8 generator keyed by the user seed.
//! Independent purposes and replicates use disjoint ChaCha stream ids, so
//! replicate `i` sees the same numbers regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Truth = 1,
    Sampling = 2,
    Split = 3,
    Solver = 4,
    Mask = 5,
    Noise = 6,
}

/// Generator for `purpose` within replicate `replicate` under `seed`.
pub fn rng_for(seed: u64, purpose: Purpose, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate << 8) | purpose as u64);
    rng
}

/// Derives the seed of replicate `i` from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, i: u64) -> u64 {
    let mut z = base.wrapping_add(i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
