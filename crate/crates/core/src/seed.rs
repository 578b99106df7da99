//! Stable seed derivation.
//!
//! Child seeds are a pure function of the base seed and a tuple of labels,
//! so results do not depend on iteration order or on `std`'s hasher, which
//! is not stable across releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`. Each part is hashed byte-wise (FNV-1a) first.
pub fn derive(base: u64, parts: &[&str]) -> u64 {
    let mut acc = splitmix64(base);
    for part in parts {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in part.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        acc = splitmix64(acc ^ h);
    }
    acc
}

pub fn rng(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}
