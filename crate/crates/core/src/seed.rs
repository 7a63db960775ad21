//! Seed derivation.

/// SplitMix64 finalizer over `a ^ (b · golden)`: a fixed, documented way of
/// deriving independent sub-seeds from a base seed and a tag.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-horizon seed: depends only on the base seed and the horizon itself,
/// so adding or removing horizons never changes another horizon's run.
pub fn horizon_seed(base: u64, horizon: usize) -> u64 {
    mix(base, horizon as u64)
}
