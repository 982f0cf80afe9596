//! Deterministic seed derivation for parallel work.
//!
//! Replicates, chains and bootstrap blocks each get an independent RNG
//! stream derived from a master seed by a splitmix64 jump: stream `k`
//! uses `splitmix64(master .wrapping_add. (k+1) * GOLDEN)`. The jump is
//! O(1) in `k`, so workers can seed themselves without coordination.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer (Steele, Lea, Flood 2014).
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent stream under `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}
