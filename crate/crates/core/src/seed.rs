//! Named seed derivation.
//!
//! Every random stream in a run is keyed by the root seed, a stage name and a
//! list of indices. Adding or removing a stage never shifts the streams of
//! other stages.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive(root: u64, stage: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((stage.len() as u64).to_le_bytes());
    hasher.update(stage.as_bytes());
    for i in indices {
        hasher.update(i.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(root: u64, stage: &str, indices: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stage, indices))
}

/// One standard normal draw.
#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}
