//! Counter-based random streams keyed by `(seed, epoch, sample, view)`.
//!
//! The four key words are used verbatim as the 256-bit ChaCha8 key, so distinct
//! keys select distinct keystreams and equal keys replay the same draws no matter
//! which thread asks. Each pipeline stage draws from its own ChaCha stream id,
//! which keeps a stage's draws independent of how many stages precede or follow it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sentinel used in the `sample`/`view` slots for draws that are not tied to a sample.
pub const UNBOUND: u64 = u64::MAX;

/// Domain ids for [`RngKey::domain`].
pub mod domains {
    pub const EPOCH_PLAN: u64 = 0;
    pub const WEIGHT_INIT: u64 = 1;
    pub const PROBE_SPLIT: u64 = 2;
    pub const SYNTHETIC_DATA: u64 = 3;
    pub const PROBE_INIT: u64 = 4;
    pub const PROBE_SHUFFLE: u64 = 5;
}

/// Derivation key for a random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub seed: u64,
    pub epoch: u64,
    pub sample: u64,
    pub view: u64,
}

impl RngKey {
    pub fn new(seed: u64, epoch: u64, sample: u64, view: u64) -> Self {
        Self {
            seed,
            epoch,
            sample,
            view,
        }
    }

    /// Key for draws that belong to a whole run component (weight init, splits, plans).
    pub fn domain(seed: u64, epoch: u64, domain: u64) -> Self {
        Self::new(seed, epoch, UNBOUND, domain)
    }

    fn to_bytes(self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, word) in out
            .chunks_exact_mut(8)
            .zip([self.seed, self.epoch, self.sample, self.view])
        {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        out
    }
}

/// A keyed family of sub-streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: RngKey,
}

impl RngStream {
    pub fn new(key: RngKey) -> Self {
        Self { key }
    }

    pub fn key(&self) -> RngKey {
        self.key
    }

    /// Generator for sub-stream `id`, positioned at counter 0.
    pub fn stage(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key.to_bytes());
        rng.set_stream(id);
        rng
    }
}

impl From<RngKey> for RngStream {
    fn from(key: RngKey) -> Self {
        Self::new(key)
    }
}
