//! Seedable, splittable random streams.
//!
//! Every stream is a PCG64 (`Lcg128Xsl64`) generator whose increment is
//! derived from a 64-bit stream id, so `(seed, stream_id)` pairs give
//! independent sequences that are identical across runs and platforms.

use rand::seq::{index, SliceRandom};
use rand::{Rng as _, RngExt};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifies where a stream came from; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct Rng {
    state: RngState,
    inner: Pcg64,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let state = ((splitmix64(seed) as u128) << 64) | splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15) as u128;
        let stream = ((stream_id as u128) << 64) | splitmix64(stream_id.wrapping_add(0x5851_f42d_4c95_7f2d)) as u128;
        Self {
            state: RngState { seed, stream_id },
            inner: Pcg64::new(state, stream),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        Self::new(state.seed, state.stream_id)
    }

    pub fn state(&self) -> RngState {
        self.state
    }

    /// A fresh stream keyed by this stream's seed and a derived id.
    pub fn substream(&self, tag: u64, index: u64) -> Rng {
        Rng::new(self.state.seed, derive_stream(self.state.stream_id, tag, index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        index::sample(&mut self.inner, len, amount).into_vec()
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.uniform_range(-bound, bound)).collect();
        Tensor::new(shape, data).expect("shape product matches data length")
    }
}

/// Inverted-dropout mask: each entry is `1/keep_prob` with probability
/// `keep_prob`, else 0. `keep_prob == 1` yields exact ones without consuming
/// randomness.
pub fn dropout_mask(rng: &mut Rng, shape: &[usize], keep_prob: f64) -> Result<Tensor> {
    validate_keep_prob(keep_prob)?;
    if keep_prob == 1.0 {
        return Ok(Tensor::ones(shape));
    }
    let scale = 1.0 / keep_prob;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.uniform() < keep_prob { scale } else { 0.0 })
        .collect();
    Tensor::new(shape, data)
}

pub fn validate_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::config("keep_prob", format!("{keep_prob} is outside (0, 1]")))
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a parent stream id with a tag and an index into a child stream id.
pub fn derive_stream(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)) ^ index)
}
