//! One master seed fanned out into independent, named random streams.
//!
//! Each stream is a ChaCha8 generator keyed by the master seed and
//! addressed by a 64-bit stream id packed from `(kind, major, minor)`, so
//! the draws for "sample 17 of task 3" never depend on how many other
//! samples were drawn before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Stream {
    /// Forward weight initialization.
    Weights = 1,
    /// Fixed random feedback weights.
    Feedback = 2,
    /// Poisson input spikes during training.
    InputEncoding = 3,
    /// Poisson label spikes during training.
    LabelEncoding = 4,
    /// Within-task sample order.
    Shuffle = 5,
    /// Reduced-data subsampling.
    Subset = 6,
    /// Input spikes during evaluation.
    Evaluation = 7,
}

const MINOR_BITS: u32 = 40;
const MAJOR_BITS: u32 = 16;

/// Master seed plus stream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    /// Streams for `master`.
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    /// The master seed.
    pub fn master(&self) -> u64 {
        self.master
    }

    /// Generator for `(kind, major, minor)`. `major` is truncated to 16 bits
    /// and `minor` to 40 bits.
    pub fn rng(&self, kind: Stream, major: u64, minor: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        let id = ((kind as u64) << (MINOR_BITS + MAJOR_BITS))
            | ((major & ((1 << MAJOR_BITS) - 1)) << MINOR_BITS)
            | (minor & ((1 << MINOR_BITS) - 1));
        rng.set_stream(id);
        rng
    }
}
