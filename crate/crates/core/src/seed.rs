//! Seed derivation. Every random stream is derived from one 64-bit master
//! seed as `splitmix64(master ^ splitmix64(stream) ^ splitmix64(index + 1))`,
//! so components and frames draw from independent, reproducible streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive_seed`].
pub mod stream {
    pub const POSE: u64 = 1;
    pub const SPARSE: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const EMBED: u64 = 4;
    pub const LOSSCHECK: u64 = 5;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream) ^ splitmix64(index.wrapping_add(1)))
}

/// The RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

pub fn rng_for(master: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, index))
}
