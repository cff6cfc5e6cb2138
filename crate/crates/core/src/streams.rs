//! Counter-based derivation of independent random streams.
//!
//! A stream is identified by a tuple of integers (base seed, ε index,
//! replication, role, …). The tuple is folded through the SplitMix64 finalizer
//! into a 64-bit seed for a ChaCha8 generator, so the stream a replication
//! sees does not depend on the order in which replications are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Path = 1,
    Limit = 2,
    Optimizer = 3,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a tuple of identifiers into a seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| mix(acc ^ mix(p)))
}

/// Seed for `(base_seed, eps_index, rep_index, role)`.
pub fn stream_seed(base_seed: u64, eps_index: usize, rep_index: usize, role: Role) -> u64 {
    derive_seed(&[base_seed, eps_index as u64, rep_index as u64, role as u64])
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
