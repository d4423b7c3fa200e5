//! Deterministic RNG stream derivation.
//!
//! Every rollout, matrix cell and training run draws from its own ChaCha
//! stream keyed by a hash of (global seed, labels...). Stream keys never
//! depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hashes a seed together with an ordered list of labels into a 32-byte key.
pub fn derive_key(seed: u64, labels: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    h.finalize().into()
}

pub fn stream(seed: u64, labels: &[&str]) -> Rng {
    ChaCha8Rng::from_seed(derive_key(seed, labels))
}

/// Derives a child 64-bit seed, for handing to components that take a plain seed.
pub fn derive_seed(seed: u64, labels: &[&str]) -> u64 {
    let k = derive_key(seed, labels);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}
