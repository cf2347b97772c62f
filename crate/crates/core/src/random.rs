//! Seeded random streams.
//!
//! Every stochastic routine derives its generator from a `(seed, stream)`
//! pair so that independent consumers never share state and results do not
//! depend on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Name recorded in reports next to each seed.
pub const GENERATOR: &str = "ChaCha8";

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Stream ids. Kept apart so the same user seed drives unrelated draws.
pub(crate) const STREAM_UNIFORM: u64 = 1;
pub(crate) const STREAM_MIXTURE: u64 = 2;
pub(crate) const STREAM_NOISE: u64 = 3;
pub(crate) const STREAM_KMEANS: u64 = 0x100;
pub(crate) const STREAM_SUBSAMPLE: u64 = 0x200;
pub(crate) const STREAM_SEED_POOL: u64 = 0x300;
pub(crate) const STREAM_CORPUS: u64 = 0x400;
