//! Seed plumbing. Every stochastic component takes an explicit `u64` seed
//! and runs its own ChaCha8 stream, so adding draws to one component never
//! perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anything usable as a stream label: a plain index or a descriptive name.
pub trait SeedLabel {
    fn label_value(&self) -> u64;
}

impl SeedLabel for u64 {
    fn label_value(&self) -> u64 {
        *self
    }
}

impl SeedLabel for &str {
    /// FNV-1a over the bytes; stable across platforms, unlike `DefaultHasher`.
    fn label_value(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for &b in self.as_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

impl SeedLabel for String {
    fn label_value(&self) -> u64 {
        self.as_str().label_value()
    }
}

/// Derive an independent child seed from a base seed and a label, so trial
/// fan-out and per-subsystem streams are reproducible and decorrelated.
/// SplitMix64 finalizer over the combined value.
pub fn derive_seed(base: u64, label: impl SeedLabel) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(label.label_value().wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
