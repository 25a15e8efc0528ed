//! Deterministic seed derivation.
//!
//! Every random stream in the workspace is a ChaCha8 generator whose seed is
//! derived from a base seed and a path of integers (stream tag, iteration,
//! instance index, ...). Derivation is a SplitMix64 chain, so streams are
//! independent of evaluation order and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Keeping them in one place avoids accidental reuse.
pub mod stream {
    pub const STRUCTURE: u64 = 0x5354_5255;
    pub const BOUNDS: u64 = 0x424f_554e;
    pub const SCENARIO: u64 = 0x5343_454e;
    pub const POLICY: u64 = 0x504f_4c49;
    pub const INIT: u64 = 0x494e_4954;
    pub const TRAIN: u64 = 0x5452_4149;
    pub const VALID: u64 = 0x5641_4c49;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const EVAL: u64 = 0x4556_414c;
    pub const RULE: u64 = 0x5255_4c45;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `path` into `base`.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(base: u64, path: &[u64]) -> ChaCha8Rng {
    rng(derive(base, path))
}
