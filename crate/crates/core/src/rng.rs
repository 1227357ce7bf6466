//! Counter-based random streams.
//!
//! A stream is identified by `(seed, index)`: the ChaCha8 key is derived from
//! the seed and the ChaCha stream id is the index, so each particle or replica
//! owns an independent sequence that does not depend on how many other
//! streams exist or on which thread consumes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Streams for indices `ids`, in order.
pub fn streams(seed: u64, ids: impl IntoIterator<Item = u64>) -> Vec<Stream> {
    ids.into_iter().map(|i| stream(seed, i)).collect()
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Sub-seed for an auxiliary purpose (initial sampling, bootstrap, ...) so it
/// never collides with the per-particle noise streams of `seed`.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
