//! Seeded randomness.
//!
//! Every random draw in the crate comes from a SplitMix64 generator. A run has
//! one user-facing seed; each subsystem derives its own stream by adding a
//! fixed offset, so changing how one subsystem consumes randomness never
//! perturbs another.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

pub const OFFSET_SPLIT: u64 = 0x0001;
pub const OFFSET_INIT: u64 = 0x0100;
pub const OFFSET_SHUFFLE: u64 = 0x0200;
pub const OFFSET_DROPOUT: u64 = 0x0300;
pub const OFFSET_SYNTH: u64 = 0x0400;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Generator for the subsystem identified by `offset`.
pub fn derived(seed: u64, offset: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed.wrapping_add(offset))
}
