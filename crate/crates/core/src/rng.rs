//! Seeded randomness shared by every stochastic operation.
//!
//! No operation in this workspace touches a global generator; callers pass a
//! [`SeededRng`] explicitly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-item seed for parallel workers: `base ⊕ index`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ index
}
