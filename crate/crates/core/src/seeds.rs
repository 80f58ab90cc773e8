//! Order-independent seed derivation: every random stream is keyed by what
//! it is for, never by when it is drawn.

use sha2::{Digest, Sha256};

/// Hashes a base seed and a sequence of labels into a 64-bit seed.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
