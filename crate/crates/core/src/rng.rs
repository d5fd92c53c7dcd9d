//! Deterministic random streams.
//!
//! A stream is ChaCha8 keyed by `base_seed` with the 64-bit ChaCha stream id
//! set to `stream_index`, so replication `r` always sees the same draws no
//! matter which worker runs it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct RngStream {
    base_seed: u64,
    stream_index: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of a stream: enough to rebuild it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPosition {
    pub base_seed: u64,
    pub stream_index: u64,
    pub draws: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(base_seed);
        inner.set_stream(stream_index);
        RngStream {
            base_seed,
            stream_index,
            draws: 0,
            inner,
        }
    }

    /// A stream keyed by a different seed derived from this one's. Used to
    /// keep covariate generation and assignment draws on separate sequences.
    pub fn sibling(&self, salt: u64) -> Self {
        RngStream::new(splitmix64(self.base_seed ^ salt), self.stream_index)
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn position(&self) -> StreamPosition {
        StreamPosition {
            base_seed: self.base_seed,
            stream_index: self.stream_index,
            draws: self.draws,
        }
    }

    /// Number of `uniform` calls made so far. Only meaningful for streams
    /// that are used exclusively through [`RngStream::uniform`].
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)`; consumes exactly one 64-bit output.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn standard_exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
