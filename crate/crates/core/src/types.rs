//! Validated vector types and the information-theoretic functionals built on
//! them.
//!
//! Every type here is an immutable value once constructed. Reductions over
//! vocabulary-sized vectors go through [`neumaier_sum`] so that the 1e-9
//! simplex tolerance survives vocabularies of 10^5 tokens and more.

use std::ops::Index;

use serde::Serialize;

use crate::error::{Error, Result};

/// Absolute tolerance on `|sum - 1|` for a vector to count as a simplex point.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Floor substituted for zero reference probabilities inside logarithms.
pub const DEFAULT_FLOOR: f64 = 1e-30;

/// Compensated (Neumaier) summation.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    neumaier_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Per-token real-valued scores (logits) for one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn vocab_size(&self) -> usize {
        self.0.len()
    }

    /// Scores divided by a positive temperature.
    pub fn scaled(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
        }
        Self::new(self.0.iter().map(|v| v / tau).collect())
    }

    /// Index of the largest score, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Index<usize> for ScoreVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A point of the probability simplex over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexDistribution(Vec<f64>);

impl SimplexDistribution {
    /// Validates at the default tolerance, see [`validate_simplex`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_simplex(probs, SIMPLEX_TOL)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty);
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Point mass on `index`.
    pub fn vertex(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::DimensionMismatch { expected: n, found: index + 1 });
        }
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Ok(Self(probs))
    }

    /// Caller guarantees the simplex invariants hold to round-off.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!(probs.iter().all(|p| *p >= 0.0));
        debug_assert!((neumaier_sum(probs.iter().copied()) - 1.0).abs() <= SIMPLEX_TOL);
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn vocab_size(&self) -> usize {
        self.0.len()
    }

    /// Number of tokens with strictly positive mass.
    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|p| **p > 0.0).count()
    }

    pub fn mode(&self) -> usize {
        argmax(&self.0)
    }

    /// Largest absolute coordinate difference.
    pub fn linf_distance(&self, other: &Self) -> f64 {
        linf(&self.0, &other.0)
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * neumaier_sum(self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()))
    }
}

impl Index<usize> for SimplexDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Membership mask over the vocabulary (a Top-K set, a nucleus, or a support).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask {
    included: Vec<bool>,
    cardinality: usize,
}

impl SupportMask {
    pub fn new(included: Vec<bool>) -> Result<Self> {
        let cardinality = included.iter().filter(|b| **b).count();
        if cardinality == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { included, cardinality })
    }

    pub fn full(n: usize) -> Result<Self> {
        Self::new(vec![true; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut included = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(Error::DimensionMismatch { expected: n, found: i + 1 });
            }
            included[i] = true;
        }
        Self::new(included)
    }

    pub fn contains(&self, index: usize) -> bool {
        self.included[index]
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn vocab_size(&self) -> usize {
        self.included.len()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.included.iter().enumerate().filter_map(|(i, b)| b.then_some(i)).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.included
    }
}

/// The model distribution a decoder is anchored to, with the floor used when
/// one of its entries appears inside a logarithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    probs: SimplexDistribution,
    floor: f64,
}

impl ReferenceDistribution {
    pub fn new(probs: SimplexDistribution) -> Self {
        Self { probs, floor: DEFAULT_FLOOR }
    }

    pub fn with_floor(probs: SimplexDistribution, floor: f64) -> Result<Self> {
        if !(floor > 0.0) || !floor.is_finite() {
            return Err(Error::OutOfRange(floor));
        }
        Ok(Self { probs, floor })
    }

    pub fn from_vec(probs: Vec<f64>) -> Result<Self> {
        Ok(Self::new(SimplexDistribution::new(probs)?))
    }

    pub fn probs(&self) -> &SimplexDistribution {
        &self.probs
    }

    pub fn as_slice(&self) -> &[f64] {
        self.probs.as_slice()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.vocab_size()
    }

    /// Entry `i` with the floor applied.
    pub fn floored(&self, i: usize) -> f64 {
        self.probs[i].max(self.floor)
    }
}

/// Checks that `v` lies on the simplex without renormalising it.
///
/// Non-finite entries are reported before negative ones, negative ones
/// before the sum check. Any entry below zero is rejected, however small.
pub fn validate_simplex(v: Vec<f64>, tol: f64) -> Result<SimplexDistribution> {
    if v.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEntry { index });
    }
    if let Some(index) = v.iter().position(|x| *x < 0.0) {
        return Err(Error::NegativeEntry { index });
    }
    let actual = neumaier_sum(v.iter().copied());
    if (actual - 1.0).abs() > tol {
        return Err(Error::SumOutOfTolerance { actual });
    }
    Ok(SimplexDistribution(v))
}

/// Rescales a nonnegative, not-all-zero vector onto the simplex.
pub fn normalize(v: &[f64]) -> Result<SimplexDistribution> {
    if v.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEntry { index });
    }
    if let Some(index) = v.iter().position(|x| *x < 0.0) {
        return Err(Error::NegativeEntry { index });
    }
    let total = neumaier_sum(v.iter().copied());
    if total <= 0.0 {
        return Err(Error::AllZero);
    }
    Ok(SimplexDistribution(v.iter().map(|x| x / total).collect()))
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(q: &SimplexDistribution) -> f64 {
    let h = -neumaier_sum(q.0.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()));
    h.max(0.0)
}

/// `KL(q || p)` in nats; zero entries of `q` contribute nothing and entries
/// of `p` are floored before the logarithm.
pub fn kl_divergence(q: &SimplexDistribution, p: &ReferenceDistribution) -> Result<f64> {
    check_len(q.vocab_size(), p.vocab_size())?;
    let kl =
        neumaier_sum(q.0.iter().enumerate().filter(|(_, qv)| **qv > 0.0).map(|(i, qv)| qv * (qv / p.floored(i)).ln()));
    Ok(kl.max(0.0))
}
