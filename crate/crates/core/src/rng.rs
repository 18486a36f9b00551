//! Named, order-independent random substreams.
//!
//! Every random draw in the library comes from a [`ChaCha8Rng`] seeded by
//! [`substream_seed`], so a candidate's draws depend only on the master seed
//! and its own key path, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags used throughout the crate.
pub mod tag {
    pub const NOISE: u64 = 0x006e_6f69_7365;
    pub const PERTURB: u64 = 0x7065_7274;
    pub const CANDIDATE: u64 = 0x6361_6e64;
    pub const TRAIN: u64 = 0x0074_7261_696e;
    pub const INIT: u64 = 0x696e_6974;
    pub const DATA: u64 = 0x6461_7461;
    pub const CORRUPT: u64 = 0x636f_7272;
    pub const SELECT: u64 = 0x7365_6c65;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const REFINE: u64 = 0x7265_6669;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a key path.
pub fn substream_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn substream(master: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(substream_seed(master, keys))
}
