//! Seeded, portable randomness.
//!
//! Every stochastic step (initialization, chunk sampling, dropout, corpus
//! generation) draws from ChaCha20, a counter-based generator whose output is
//! identical on every platform for a given seed and stream.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Prng = ChaCha20Rng;

pub fn seeded(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// An independent stream of `seed`, e.g. one per utterance.
pub fn derived(seed: u64, stream: u64) -> Prng {
    let mut rng = Prng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal(rng: &mut Prng) -> f64 {
    StandardNormal.sample(rng)
}
