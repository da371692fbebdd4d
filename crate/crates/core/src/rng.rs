//! Seeded random streams.
//!
//! Every random decision in the crate goes through [`seeded`], so output is a
//! pure function of the seeds recorded in chromosomes and manifests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator type used everywhere.
pub type Stream = ChaCha8Rng;

/// Identifier recorded in run manifests.
pub const ALGORITHM: &str = "chacha8 (rand_chacha 0.9, seed_from_u64); normal: rand_distr 0.5 ziggurat";

pub fn seeded(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable per-entry seed: first 8 bytes (little-endian) of
/// `sha256(master_seed_le || id_utf8)`.
pub fn derive_seed(master_seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
