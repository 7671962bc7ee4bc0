//! Seed handling shared by every stochastic component.
//!
//! All randomness flows from a master seed through [`derive_seed`], so any
//! component can be re-run in isolation (or in parallel) and still draw the
//! same numbers it would have drawn inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(stream, ordinal)` under `master`.
///
/// `stream` separates independent consumers (track generation, shuffling,
/// augmentation draws) so that two consumers with the same ordinal never
/// share a sequence.
pub fn derive_seed(master: u64, stream: u64, ordinal: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream)).wrapping_add(ordinal))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
