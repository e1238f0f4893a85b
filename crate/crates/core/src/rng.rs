//! Seeded random streams. Every stochastic step draws from its own stream so
//! that adding a draw in one stage cannot perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags, one per consumer.
pub mod stream {
    pub const SYNTHETIC: u64 = 1;
    pub const TRAIN_CAL_SPLIT: u64 = 2;
    pub const TEST_SPLIT: u64 = 3;
    pub const PERMUTATIONS: u64 = 4;
    pub const KDE_HOLDOUT: u64 = 5;
    pub const PAIR_SUBSAMPLE: u64 = 6;
}

/// Mixes `seed` and `stream` with the splitmix64 finalizer.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}
