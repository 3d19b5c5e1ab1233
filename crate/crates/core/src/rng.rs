//! Seeded random streams.
//!
//! Every stochastic routine takes its generator from [`stream`], keyed by a
//! base seed and a path of integer ids (step, graph index, ...). Two calls
//! with the same key produce the same sequence regardless of what other
//! streams were consumed in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child stream `ids` of the generator seeded with `seed`.
pub fn stream(seed: u64, ids: &[u64]) -> StreamRng {
    let mut key = splitmix64(ids.len() as u64);
    for &id in ids {
        key = splitmix64(key ^ id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}
