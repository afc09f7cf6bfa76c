//! Seeded sampling and Monte-Carlo coverage estimates.
//!
//! The generator is ChaCha20 (RFC 7539 block function, 20 rounds) as
//! implemented by `rand_chacha`. A stream is keyed by the seed (little-endian,
//! zero-padded to 32 bytes) and selected by `stream_id`, so
//! `(seed, stream_id)` pairs give independent, platform-stable sequences.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::bok::WeightVector;
use crate::error::Result;
use crate::types::{check_len, SimplexDistribution};

/// Identifier of the generator behind [`RngStream`].
pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream_id);
        Self { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
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

/// Compensated cumulative sums of `q`. The last positive cell is stretched to
/// 1 so that the final reachable token absorbs rounding residue.
#[derive(Debug, Clone)]
pub struct CumulativeTable {
    upper: Vec<f64>,
}

impl CumulativeTable {
    pub fn new(q: &SimplexDistribution) -> Self {
        let mut upper = Vec::with_capacity(q.vocab_size());
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for &v in q.as_slice() {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                c += (sum - t) + v;
            } else {
                c += (v - t) + sum;
            }
            sum = t;
            upper.push(sum + c);
        }
        if let Some(last) = q.as_slice().iter().rposition(|v| *v > 0.0) {
            for u in &mut upper[last..] {
                *u = 1.0;
            }
        }
        Self { upper }
    }

    /// Smallest index whose upper edge exceeds `u`; zero-mass cells are
    /// never returned.
    pub fn lookup(&self, u: f64) -> usize {
        self.upper.partition_point(|&edge| edge <= u).min(self.upper.len() - 1)
    }
}

/// One draw by inverse CDF.
pub fn sample_token(q: &SimplexDistribution, rng: &mut RngStream) -> usize {
    CumulativeTable::new(q).lookup(rng.next_f64())
}

/// `k` i.i.d. draws with replacement.
pub fn sample_k(q: &SimplexDistribution, k: usize, rng: &mut RngStream) -> Vec<usize> {
    let table = CumulativeTable::new(q);
    (0..k).map(|_| table.lookup(rng.next_f64())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Monte-Carlo estimate of the weighted K-coverage: each trial draws `k`
/// tokens and scores the total weight of the distinct tokens hit.
pub fn estimate_coverage(
    q: &SimplexDistribution,
    w: &WeightVector,
    k: u32,
    trials: u64,
    rng: &mut RngStream,
) -> Result<CoverageEstimate> {
    check_len(q.vocab_size(), w.len())?;
    let trials = trials.max(1);
    let table = CumulativeTable::new(q);
    let mut seen = vec![u64::MAX; q.vocab_size()];
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for t in 0..trials {
        let mut value = 0.0;
        for _ in 0..k {
            let v = table.lookup(rng.next_f64());
            if seen[v] != t {
                seen[v] = t;
                value += w[v];
            }
        }
        let delta = value - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (value - mean);
    }
    let std_error = if trials > 1 { (m2 / (trials - 1) as f64).sqrt() / (trials as f64).sqrt() } else { 0.0 };
    Ok(CoverageEstimate { mean, std_error, trials })
}
