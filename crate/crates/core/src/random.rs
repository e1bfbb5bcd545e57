//! Reproducible, splittable random streams.
//!
//! A [`RngStream`] is a ChaCha12 generator keyed by a 64-bit seed and a
//! 64-bit stream id. ChaCha is counter based, so two streams that share a seed
//! but differ in stream id never overlap, and the output for a given
//! `(seed, stream_id)` pair is identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives the `index`-th child stream.
    ///
    /// The child depends only on `(seed, stream_id, index)`, never on how many
    /// values have already been drawn from `self`, so workers can be handed
    /// children in any order and still reproduce the same draws.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, child_stream_id(self.stream_id, index))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn child_stream_id(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
