//! Deterministic random streams.
//!
//! Every repetition draws from its own ChaCha8 stream keyed by
//! `(master seed, stream index)`, so results do not depend on the order or
//! thread on which repetitions execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub master: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }
}

/// Stream index for repetition `rep` of sweep point `point`.
pub fn stream_index(point: usize, rep: u64) -> u64 {
    ((point as u64) << 40) | rep
}
