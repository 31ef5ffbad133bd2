//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a
//! splitmix64 hash of a parent seed and a stream index.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Seed for a named sub-stream, e.g. `"split"` or `"mutate"`.
pub fn named_seed(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the master seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(master, h)
}

pub fn stream(master: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, index))
}

pub fn named(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(named_seed(master, name))
}
