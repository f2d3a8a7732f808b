//! Seeded, stream-isolated random number generation.
//!
//! Every stochastic component draws from an [`RngStream`] identified by a
//! `(seed, stream_id)` pair. Streams are ChaCha8 keystreams, so the same pair
//! always yields the same sequence on a given build, and distinct stream ids
//! select disjoint keystreams under the same key.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// splitmix64 finalizer, used to derive child stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream.
///
/// Counts the 32/64-bit words it hands out so callers can assert that a code
/// path consumed no randomness at all.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    words: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            words: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of RNG words consumed since construction.
    pub fn words_consumed(&self) -> u64 {
        self.words
    }

    /// A fresh stream under the same seed whose id is derived from this
    /// stream's id and `tag`. Independent of how much of `self` was consumed.
    pub fn substream(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, mix64(self.stream_id ^ mix64(tag)))
    }

    /// Convenience for two-level derivation, e.g. `(episode, agent)`.
    pub fn substream2(&self, a: u64, b: u64) -> RngStream {
        self.substream(mix64(a).wrapping_add(b.rotate_left(17)) ^ 0xA5A5_5A5A_0F0F_F0F0)
    }

    /// Bernoulli(p) draw. `p` is clamped to [0, 1].
    pub fn bernoulli(&mut self, p: f64) -> bool {
        let u: f64 = self.random();
        u < p.clamp(0.0, 1.0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.words += dst.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dst)
    }
}

/// Source of the random values consumed by agent selection.
///
/// Production code uses [`RngStream`]; tests and replays can inject fixed
/// values through [`ScriptedDraws`].
pub trait DrawSource {
    /// One draw from Beta(alpha, beta).
    fn beta(&mut self, alpha: f64, beta: f64) -> Result<f64>;
    /// One draw from Uniform(0, 1).
    fn uniform(&mut self) -> f64;
}

pub(crate) fn check_beta_params(alpha: f64, beta: f64) -> Result<()> {
    if !alpha.is_finite() || !beta.is_finite() || alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "Beta parameters must be finite and positive, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

impl DrawSource for RngStream {
    fn beta(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        check_beta_params(alpha, beta)?;
        let dist = Beta::new(alpha, beta).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(dist.sample(self))
    }

    fn uniform(&mut self) -> f64 {
        self.random()
    }
}

/// Replays a fixed queue of values, ignoring distribution parameters.
#[derive(Clone, Debug, Default)]
pub struct ScriptedDraws {
    queue: std::collections::VecDeque<f64>,
}

impl ScriptedDraws {
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        Self {
            queue: values.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl DrawSource for ScriptedDraws {
    fn beta(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        check_beta_params(alpha, beta)?;
        self.queue
            .pop_front()
            .ok_or_else(|| Error::contract("scripted draw queue exhausted"))
    }

    fn uniform(&mut self) -> f64 {
        self.queue
            .pop_front()
            .expect("scripted draw queue exhausted")
    }
}
