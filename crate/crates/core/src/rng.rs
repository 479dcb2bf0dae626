//! Seeded random streams.
//!
//! Every chain owns one ChaCha key derived from its seed; each class of
//! operation draws from its own stream of that key, so adding draws in one
//! class never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Functions = 2,
    Sticks = 3,
    Kernel = 4,
    Alpha = 5,
    Prior = 6,
    Data = 7,
    Holdout = 8,
}

/// Stream `stream` of the chain keyed by `seed`.
pub fn stream(seed: u64, stream: Stream) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Derives an independent seed for sub-chain `index` (e.g. one chain per
/// data source or per holdout repeat).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
