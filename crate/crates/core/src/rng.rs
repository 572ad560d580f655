//! Seedable, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed, with the
//! ChaCha stream id derived from a tuple of labels (worker, draw index,
//! purpose...). Two streams with different label tuples never overlap, and a
//! stream's output does not depend on how many other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream-purpose labels used across the crate.
pub mod purpose {
    pub const ORACLE: u64 = 1;
    pub const SERVER: u64 = 2;
    pub const WORKER: u64 = 3;
    pub const TRIAL: u64 = 4;
    pub const SUITE: u64 = 5;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The stream identified by `labels` under `seed`.
pub fn substream(seed: u64, labels: &[u64]) -> Stream {
    let mut id = 0x5EED_u64;
    for &l in labels {
        id = splitmix64(id ^ splitmix64(l));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
