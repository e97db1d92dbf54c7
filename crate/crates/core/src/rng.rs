//! Keyed deterministic random streams.
//!
//! Every random draw in the harness comes from a ChaCha8 generator whose
//! 256-bit seed is the SHA-256 digest of a [`StreamKey`]. Keys encode
//! `(global seed, image id, stage path, sample index)`, so results do not
//! depend on which worker processes an image or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub image: String,
    pub stage: String,
    pub sample: u32,
}

impl StreamKey {
    pub fn new(seed: u64, image: impl Into<String>, stage: impl Into<String>) -> Self {
        StreamKey {
            seed,
            image: image.into(),
            stage: stage.into(),
            sample: 0,
        }
    }

    pub fn with_sample(&self, sample: u32) -> Self {
        StreamKey {
            sample,
            ..self.clone()
        }
    }

    /// Appends `tag` to the stage path.
    pub fn derive(&self, tag: &str) -> Self {
        StreamKey {
            stage: format!("{}/{tag}", self.stage),
            ..self.clone()
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"idard-stream-v1");
        h.update(self.seed.to_le_bytes());
        h.update((self.image.len() as u64).to_le_bytes());
        h.update(self.image.as_bytes());
        h.update((self.stage.len() as u64).to_le_bytes());
        h.update(self.stage.as_bytes());
        h.update(self.sample.to_le_bytes());
        h.finalize().into()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest())
    }
}
