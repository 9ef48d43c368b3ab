//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream)`
//! pair so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids for the independent consumers inside one run.
pub mod streams {
    pub const SIM_SETUP: u64 = 1;
    pub const SIM_TRAFFIC: u64 = 2;
    pub const UNBIASED_LABELS: u64 = 3;
    pub const ORACLE_LABELS: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A uniform draw in `[0, 1)` that depends only on `(seed, index)`.
pub fn keyed_uniform(seed: u64, index: u64) -> f64 {
    stream_rng(seed, index).random::<f64>()
}
