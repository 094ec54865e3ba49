//! Deterministic random streams.
//!
//! Every stochastic operation takes an explicit RNG. Work that fans out
//! (batch construction, sampling chains) derives one independent stream per
//! item from `(seed, domain, index)` so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for item `index` of `domain` under `seed`.
pub fn substream(seed: u64, domain: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(domain)));
    rng.set_stream(index);
    rng
}

/// A child seed for `tag`, e.g. one per training iteration.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Domain tags, kept distinct so that streams never collide across uses.
pub mod domain {
    pub const TRAIN_EXAMPLE: u64 = 1;
    pub const VALIDATION: u64 = 2;
    pub const SAMPLE_CHAIN: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const MONITOR: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const BATCH: u64 = 7;
    pub const DATA: u64 = 8;
    pub const PATTERNS: u64 = 9;
    pub const POISSON: u64 = 10;
}
