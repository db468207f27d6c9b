//! Deterministic random substreams.
//!
//! Every unit of simulation work (a repetition, a bootstrap resample, a batch
//! of clusters) draws from its own ChaCha8 stream, seeded by hashing the
//! master seed with a domain string and integer indices. Results therefore do
//! not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Stream for `(master_seed, domain, indices)`.
pub fn substream(master_seed: u64, domain: &str, indices: &[u64]) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(seed)
}

/// Derives a child seed, for handing a stream root to a nested computation.
pub fn child_seed(master_seed: u64, domain: &str, indices: &[u64]) -> u64 {
    use rand::RngCore;
    substream(master_seed, domain, indices).next_u64()
}
