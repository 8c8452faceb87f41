//! Deterministic seed derivation.
//!
//! Child seeds are `splitmix64(base ⊕ splitmix64(tag ⊕ index·γ))` with `γ` the
//! 64-bit golden-ratio increment. Generators themselves are always
//! `ChaCha8Rng::seed_from_u64`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for the `index`-th draw of purpose `tag` under `base`.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag ^ index.wrapping_mul(GAMMA)))
}

pub mod tags {
    pub const DATA: u64 = 1;
    pub const FIT: u64 = 2;
    pub const GRADCHECK: u64 = 3;
    pub const MASK: u64 = 4;
}
