use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Root seed from which independent, named random streams are derived.
///
/// A stream is keyed by `(seed, name)`; the same pair always yields the same
/// sequence, and distinct names yield unrelated sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    seed: u64,
}

/// The concrete generator handed out by [`SeedTree`].
pub type StreamRng = ChaCha8Rng;

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> StreamRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        ChaCha8Rng::from_seed(digest)
    }

    /// Child tree for a named scope, e.g. one per epoch.
    pub fn child(&self, name: &str) -> SeedTree {
        let mut h = Sha256::new();
        h.update(b"child");
        h.update(self.seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut seed = [0u8; 8];
        seed.copy_from_slice(&digest[..8]);
        SeedTree::new(u64::from_le_bytes(seed))
    }
}
