//! Keyed random streams.
//!
//! Every stochastic stage draws from its own stream derived from a base seed
//! and a stage name, so adding or reconfiguring one stage never shifts the
//! random numbers another stage sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for `key` under `seed`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    splitmix(seed ^ fnv1a(key.as_bytes()))
}

pub fn stream(seed: u64, key: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}

pub fn indexed_stream(seed: u64, key: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix(derive_seed(seed, key) ^ splitmix(index)))
}
