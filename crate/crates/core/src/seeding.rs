//! Seed derivation.
//!
//! Every random stage draws from its own stream derived from a base seed, so
//! changing one stage (say, the number of Monte Carlo draws) never perturbs
//! another, and per-point streams do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with an integer tag (for example a point index).
pub fn mix(base: u64, tag: u64) -> u64 {
    splitmix(splitmix(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Mixes a base seed with a stage label.
pub fn stage(base: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix(base, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
