use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Samples drawn per independently seeded chunk.
pub const CHUNK: usize = 8192;

/// Purpose-specific stream ids, so drawing more of one kind never shifts
/// another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamId {
    Surface = 1,
    Sharp = 2,
    Near = 3,
    Volume = 4,
    Cameras = 5,
}

/// A ChaCha8 stream identified by (seed, stream id). Chunk `c` uses the
/// ChaCha stream `(id << 32) | c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64, id: StreamId) -> Self {
        RngStream {
            seed,
            stream: id as u64,
        }
    }

    pub fn chunk_rng(&self, chunk: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.stream << 32) | chunk);
        rng
    }

    /// The first chunk's generator, for sequential consumers.
    pub fn rng(&self) -> ChaCha8Rng {
        self.chunk_rng(0)
    }
}
