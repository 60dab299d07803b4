//! Seed derivation and keyed pseudo-random draws.
//!
//! Several quantities must be a pure function of `(seed, index, ...)` rather
//! than of the order in which they are requested: oracle label flips, per
//! response concept noise, random acquisition scores and the training noise
//! attached to each `(pair, concept)` label. Those go through [`keyed_u64`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags so that different consumers of the same seed never collide.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const WORLD: u64 = 0x574f_524c;
    pub const CONCEPT_NOISE: u64 = 0x434e_4f49;
    pub const FLIP: u64 = 0x464c_4950;
    pub const RANDOM_SCORE: u64 = 0x524e_4453;
    pub const EIG: u64 = 0x0045_4947;
    pub const INIT: u64 = 0x494e_4954;
    pub const TRAIN: u64 = 0x5452_4e00;
    pub const REPARAM: u64 = 0x5250_524d;
    pub const EPISODE: u64 = 0x4550_4953;
    pub const PROBE: u64 = 0x5052_4f42;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into one 64-bit value.
pub fn keyed_u64(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c908u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Uniform in the open interval (0, 1).
pub fn keyed_uniform(words: &[u64]) -> f64 {
    ((keyed_u64(words) >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal via Box–Muller on two keyed uniforms.
pub fn keyed_normal(words: &[u64]) -> f64 {
    let mut key = Vec::with_capacity(words.len() + 1);
    key.extend_from_slice(words);
    key.push(1);
    let u1 = keyed_uniform(&key);
    *key.last_mut().unwrap() = 2;
    let u2 = keyed_uniform(&key);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    keyed_u64(&[seed, tag, index])
}

pub fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
