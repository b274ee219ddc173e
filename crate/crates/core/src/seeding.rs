//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate draws from a named stream whose
//! seed is derived here. Streams are independent of evaluation order, so
//! parallel generation (clips, init of separate network components, metric
//! resamples) produces the same bytes as a sequential run.

/// One round of the splitmix64 output function. Good avalanche, cheap, and
/// stable across platforms — used only for seed derivation, never as the
/// working RNG (that is ChaCha).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Seed for the stream named `label` under `base`. Distinct labels give
/// uncorrelated streams; the same (base, label) always maps to the same seed.
pub fn mix(base: u64, label: &str) -> u64 {
    splitmix64(splitmix64(base) ^ fnv1a64(label.as_bytes()))
}

/// Seed for the `index`-th item of a family (e.g. per-clip seeds).
pub fn mix_index(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mask that keeps seeds in the non-negative `i64` range so they survive a
/// round trip through TOML (which has no unsigned 64-bit integer type).
pub const SEED63_MASK: u64 = (1 << 63) - 1;
