//! Best-of-K decoding.
//!
//! With `K` i.i.d. draws from `q`, token `v` shows up at least once with
//! probability `1 - (1 - q(v))^K`. The BoK decoder maximises
//!
//! ```text
//! f(q) = <q, s> - lambda * KL(q || p) + beta_bar * sum_v w(v) (1 - (1 - q(v))^K)
//! ```
//!
//! over the simplex, where `p` is the model distribution and `w` are
//! nonnegative importance weights. The coverage term is concave with
//! diminishing marginal gain `K (1 - q)^(K-1)`, so mass is pushed towards
//! valuable tokens that are not yet likely to be drawn. There is no closed
//! form; [`bok_decode`] runs entropic mirror ascent from `q0 = p`.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::decoders::descending_order;
use crate::error::{Error, Result};
use crate::solvers::{mirror_solve, SimplexObjective, SolveDiagnostics, SolverConfig};
use crate::types::{
    check_len, dot, kl_divergence, neumaier_sum, normalize, ReferenceDistribution, ScoreVector, SimplexDistribution,
};

/// Probability that a token of mass `qv` appears in `k` i.i.d. draws.
pub fn hit_probability(qv: f64, k: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&qv) {
        return Err(Error::OutOfRange(qv));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    Ok(hit(qv, k))
}

fn hit(qv: f64, k: u32) -> f64 {
    if k == 1 {
        return qv;
    }
    // 1 - (1-q)^K without cancellation for small q
    -(k as f64 * (-qv).ln_1p()).exp_m1()
}

/// `d/dq [1 - (1-q)^K] = K (1-q)^(K-1)`.
pub fn hit_derivative(qv: f64, k: u32) -> f64 {
    let base = 1.0 - qv;
    let power = match i32::try_from(k - 1) {
        Ok(e) => base.powi(e),
        Err(_) => base.powf((k - 1) as f64),
    };
    k as f64 * power
}

/// Nonnegative per-token importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(index) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFiniteEntry { index });
        }
        if let Some(index) = weights.iter().position(|w| *w < 0.0) {
            return Err(Error::NegativeEntry { index });
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        neumaier_sum(self.0.iter().copied())
    }
}

impl Index<usize> for WeightVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum WeightScheme {
    Uniform,
    /// `w = p`
    #[default]
    ModelProb,
    /// 1 on the `m` highest scores, 0 elsewhere.
    #[serde(rename = "top_m_indicator")]
    TopM {
        m: usize,
    },
    /// `w(v) = rank(v)^-gamma`, rank 1 being the best score.
    RankSoftened {
        gamma: f64,
    },
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    /// `uniform`, `model_prob`, `top_m:<M>` or `rank:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSchemeParam(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        Ok(match (name, arg) {
            ("uniform", None) => WeightScheme::Uniform,
            ("model_prob" | "model-prob", None) => WeightScheme::ModelProb,
            ("top_m" | "top-m" | "top_m_indicator", Some(a)) => WeightScheme::TopM { m: a.parse().map_err(|_| bad())? },
            ("rank" | "rank_softened" | "rank-softened", Some(a)) => {
                WeightScheme::RankSoftened { gamma: a.parse().map_err(|_| bad())? }
            }
            _ => return Err(bad()),
        })
    }
}

pub fn make_weights(scheme: WeightScheme, s: &ScoreVector, p: &ReferenceDistribution) -> Result<WeightVector> {
    let n = s.vocab_size();
    check_len(n, p.vocab_size())?;
    match scheme {
        WeightScheme::Uniform => Ok(WeightVector::uniform(n)),
        WeightScheme::ModelProb => WeightVector::new(p.as_slice().to_vec()),
        WeightScheme::TopM { m } => {
            if m == 0 || m > n {
                return Err(Error::InvalidSchemeParam(format!("top_m needs 1 <= M <= {n}, got {m}")));
            }
            let mut w = vec![0.0; n];
            for &i in &descending_order(s.as_slice())[..m] {
                w[i] = 1.0;
            }
            WeightVector::new(w)
        }
        WeightScheme::RankSoftened { gamma } => {
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidSchemeParam(format!("rank softening needs gamma > 0, got {gamma}")));
            }
            let mut w = vec![0.0; n];
            for (rank, &i) in descending_order(s.as_slice()).iter().enumerate() {
                w[i] = ((rank + 1) as f64).powf(-gamma);
            }
            WeightVector::new(w)
        }
    }
}

/// Weighted K-coverage `sum_v w(v) (1 - (1 - q(v))^K)`.
pub fn coverage_utility(q: &SimplexDistribution, w: &WeightVector, k: u32) -> Result<f64> {
    check_len(q.vocab_size(), w.len())?;
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    Ok(neumaier_sum(q.as_slice().iter().zip(w.as_slice()).map(|(&qv, &wv)| wv * hit(qv, k))))
}

/// Parameters of the BoK objective at one decoding step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BokTerms {
    pub lambda: f64,
    pub beta_bar: f64,
    pub k: u32,
}

impl BokTerms {
    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::NonPositiveLambda(self.lambda));
        }
        if !(self.beta_bar >= 0.0) || !self.beta_bar.is_finite() {
            return Err(Error::InvalidConfig(format!("beta_bar must be nonnegative, got {}", self.beta_bar)));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dims(q: &SimplexDistribution, s: &ScoreVector, p: &ReferenceDistribution, w: &WeightVector) -> Result<()> {
    let n = q.vocab_size();
    check_len(n, s.vocab_size())?;
    check_len(n, p.vocab_size())?;
    check_len(n, w.len())
}

/// `<q, s> - lambda KL(q || p) + beta_bar U_K(q)`.
pub fn bok_objective(
    q: &SimplexDistribution,
    s: &ScoreVector,
    p: &ReferenceDistribution,
    w: &WeightVector,
    terms: BokTerms,
) -> Result<f64> {
    check_dims(q, s, p, w)?;
    terms.validate()?;
    Ok(dot(q.as_slice(), s.as_slice()) - terms.lambda * kl_divergence(q, p)?
        + terms.beta_bar * coverage_utility(q, w, terms.k)?)
}

/// `s - lambda (log(q/p) + 1) + beta_bar w K (1-q)^(K-1)`, defined on the
/// interior of the simplex.
pub fn bok_gradient(
    q: &SimplexDistribution,
    s: &ScoreVector,
    p: &ReferenceDistribution,
    w: &WeightVector,
    terms: BokTerms,
) -> Result<Vec<f64>> {
    check_dims(q, s, p, w)?;
    terms.validate()?;
    if let Some(index) = q.as_slice().iter().position(|v| *v <= 0.0) {
        return Err(Error::ZeroProbabilityUnderLogGradient { index });
    }
    Ok((0..q.vocab_size()).map(|i| partial(q[i], s[i], p.floored(i), w[i], terms)).collect())
}

fn partial(qi: f64, si: f64, pi: f64, wi: f64, t: BokTerms) -> f64 {
    si - t.lambda * ((qi / pi).ln() + 1.0) + t.beta_bar * wi * hit_derivative(qi, t.k)
}

/// The BoK objective as a solver oracle. Zero coordinates get a zero
/// gradient entry, which mirror ascent ignores.
struct BokObjective<'a> {
    s: &'a ScoreVector,
    p: &'a ReferenceDistribution,
    w: &'a WeightVector,
    terms: BokTerms,
}

impl SimplexObjective for BokObjective<'_> {
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .enumerate()
            .map(
                |(i, &qi)| {
                    if qi > 0.0 {
                        partial(qi, self.s[i], self.p.floored(i), self.w[i], self.terms)
                    } else {
                        0.0
                    }
                },
            )
            .collect()
    }

    fn value(&self, q: &[f64]) -> Option<f64> {
        let lin = dot(q, self.s.as_slice());
        let kl = neumaier_sum(
            q.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, &v)| v * (v / self.p.floored(i)).ln()),
        );
        let cov = neumaier_sum(q.iter().zip(self.w.as_slice()).map(|(&v, &wv)| wv * hit(v, self.terms.k)));
        Some(lin - self.terms.lambda * kl + self.terms.beta_bar * cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BokConfig {
    /// Sample budget `K`.
    pub k: u32,
    /// KL anchor weight.
    pub lambda: f64,
    /// Coverage weight, `lambda * beta`.
    pub beta_bar: f64,
    pub weights: WeightScheme,
    pub solver: SolverConfig,
}

/// `(beta, lambda)` operating points with five mirror steps per token.
pub const PRESETS: [(f64, f64); 3] = [(0.01, 0.1), (0.02, 0.2), (0.05, 0.5)];

/// The first preset: `beta = 0.01`, `lambda = 0.1`, `K = 8`, `w = p`.
impl Default for BokConfig {
    fn default() -> Self {
        Self::preset(PRESETS[0].0, PRESETS[0].1)
    }
}

impl BokConfig {
    /// Preset from `(beta, lambda)`: `beta_bar = lambda * beta`, five
    /// mirror-ascent steps, no early stop.
    pub fn preset(beta: f64, lambda: f64) -> Self {
        Self {
            k: 8,
            lambda,
            beta_bar: lambda * beta,
            weights: WeightScheme::ModelProb,
            solver: SolverConfig { max_iters: 5, stop_tol: 0.0, ..SolverConfig::default() },
        }
    }

    pub fn terms(&self) -> BokTerms {
        BokTerms { lambda: self.lambda, beta_bar: self.beta_bar, k: self.k }
    }

    pub fn validate(&self) -> Result<()> {
        self.terms().validate()?;
        self.solver.validate()
    }
}

/// Reference distribution with its floor applied and renormalised, the
/// strictly positive warm start for mirror ascent.
fn warm_start(p: &ReferenceDistribution) -> Result<SimplexDistribution> {
    let floored: Vec<f64> = (0..p.vocab_size()).map(|i| p.floored(i)).collect();
    normalize(&floored)
}

/// Runs BoK with weights derived from `cfg.weights`.
pub fn bok_decode(
    s: &ScoreVector,
    p: &ReferenceDistribution,
    cfg: &BokConfig,
) -> Result<(SimplexDistribution, SolveDiagnostics)> {
    let w = make_weights(cfg.weights, s, p)?;
    bok_decode_with_weights(s, p, &w, cfg)
}

pub fn bok_decode_with_weights(
    s: &ScoreVector,
    p: &ReferenceDistribution,
    w: &WeightVector,
    cfg: &BokConfig,
) -> Result<(SimplexDistribution, SolveDiagnostics)> {
    cfg.validate()?;
    check_len(s.vocab_size(), p.vocab_size())?;
    check_len(s.vocab_size(), w.len())?;
    let objective = BokObjective { s, p, w, terms: cfg.terms() };
    let solver = SolverConfig { stabilize: true, ..cfg.solver.clone() };
    mirror_solve(&objective, &warm_start(p)?, &solver)
}
