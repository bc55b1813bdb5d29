//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator
//! whose seed is derived from a user seed plus a tag, so streams never
//! depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a tag into a seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x5EED)))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub mod tags {
    pub const PI_STIMULUS: u64 = 1;
    pub const FAULTS: u64 = 2;
    pub const EMBED_INIT: u64 = 3;
    pub const PARAM_INIT: u64 = 4;
    pub const F_PAIRS: u64 = 5;
    pub const FF_PAIRS: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const WORKLOAD: u64 = 8;
}
