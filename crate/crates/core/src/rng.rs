//! Deterministic, splittable random streams.
//!
//! Every [`Rng`] is a ChaCha8 keystream addressed by `(seed, stream, word_pos)`.
//! ChaCha is counter based, so a stream can be positioned anywhere and
//! distinct streams under the same key never overlap. [`Rng::derive`] hands
//! out child streams for parallel work without touching the parent's
//! position.
//!
//! Normal variates come from the ziggurat sampler in `rand_distr`
//! ([`StandardNormal`]); it keeps no cached spare between draws, so the
//! generator state is fully described by the keystream position.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of an [`Rng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Keystream word position; a decimal string because it is a `u128`.
    pub word_pos: String,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    fn at(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent child stream identified by `key`. The parent is not advanced.
    pub fn derive(&self, key: u64) -> Rng {
        let stream = splitmix64(self.stream ^ splitmix64(key.wrapping_mul(GOLDEN) ^ 0xA5A5));
        Self::at(self.seed, stream)
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream: self.stream,
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let pos: u128 = state
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad rng word_pos {:?}", state.word_pos)))?;
        let mut rng = Self::at(state.seed, state.stream);
        rng.inner.set_word_pos(pos);
        Ok(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    /// Uniform real in `[-bound, bound]`.
    pub fn symmetric_uniform(&mut self, bound: f64) -> f64 {
        if bound == 0.0 {
            return 0.0;
        }
        Uniform::new_inclusive(-bound, bound)
            .expect("finite positive bound")
            .sample(&mut self.inner)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}
