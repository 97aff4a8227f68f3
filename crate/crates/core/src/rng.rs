//! Named, independently seeded random streams.
//!
//! Every random draw in the engine comes from `stream(seed, name)`, so
//! e.g. the sampler can be reseeded in a test without disturbing
//! parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const SAMPLER: &str = "sampler";
pub const KMEANS: &str = "kmeans";
pub const SYNTH: &str = "synth";

/// FNV-1a, stable across platforms and releases.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}
