//! Seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha8 generator keyed by a seed
//! derived from a parent seed and a stream index. Derivation is a pure
//! function, so an example, model or noise sample always gets the same
//! stream no matter which worker computes it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every stream.
pub type StreamRng = ChaCha8Rng;

/// Stream tags, so that sibling streams of one parent never collide.
pub mod tag {
    pub const EXAMPLE: u64 = 0x6578_616d_706c_6500;
    pub const SPLIT: u64 = 0x7370_6c69_7400_0000;
    pub const MODEL: u64 = 0x6d6f_6465_6c00_0000;
    pub const INIT: u64 = 0x696e_6974_0000_0000;
    pub const SHUFFLE: u64 = 0x7368_7566_666c_6500;
    pub const DROPOUT: u64 = 0x6472_6f70_6f75_7400;
    pub const NOISE: u64 = 0x6e6f_6973_6500_0000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a stream index into a child seed.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.rotate_left(29) ^ 0x2545_f491_4f6c_dd1d)
}

/// Child generator for `(parent, tag, index)`.
pub fn stream(parent: u64, tag: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(derive_seed(parent, tag), index))
}
