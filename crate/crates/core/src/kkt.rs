//! First-order optimality certificates for `max <q, s> - lambda * Omega(q)`.
//!
//! With `r(v) = s(v) - lambda * dOmega/dq(v)`, a point `q*` is optimal iff
//! there is a scalar `eta` such that `r(v) = eta` wherever `q*(v) > 0` and
//! `r(v) <= eta` wherever `q*(v) = 0`. [`kkt_residual`] estimates `eta` as the
//! mean of `r` over the support and reports how far each condition is from
//! holding.

use crate::bok::WeightVector;
use crate::decoders::{DecoderConfig, DecoderKind};
use crate::error::{Error, Result};
use crate::types::{check_len, neumaier_sum, ReferenceDistribution, ScoreVector, SimplexDistribution, SupportMask};

/// Support threshold separating true zeros from solver round-off.
pub const DEFAULT_SUPPORT_EPS: f64 = 1e-12;
/// Certificate tolerance for closed-form outputs.
pub const CLOSED_FORM_TOL: f64 = 1e-8;
/// Certificate tolerance for iterative solver outputs.
pub const SOLVER_TOL: f64 = 1e-6;

/// Coverage reward inside the BoK regulariser, `-beta * U_K(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTerm {
    pub k: u32,
    /// Unscaled coverage weight `beta = beta_bar / lambda`.
    pub beta: f64,
    pub weights: WeightVector,
}

/// Which `Omega(q)` is in force.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularizerSpec {
    /// `sum q log q`
    NegativeEntropy,
    /// `0.5 * ||q||^2`
    Quadratic,
    /// `KL(q || p)`
    KlToReference { reference: ReferenceDistribution },
    /// `KL(q || p) - beta * U_K(q)`
    Bok { reference: ReferenceDistribution, coverage: CoverageTerm },
}

impl RegularizerSpec {
    /// BoK regulariser for an objective written with `beta_bar = lambda * beta`.
    pub fn bok(
        reference: ReferenceDistribution,
        weights: WeightVector,
        k: u32,
        beta_bar: f64,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::NonPositiveLambda(lambda));
        }
        check_len(reference.vocab_size(), weights.len())?;
        Ok(RegularizerSpec::Bok { reference, coverage: CoverageTerm { k, beta: beta_bar / lambda, weights } })
    }

    pub fn reference(&self) -> Option<&ReferenceDistribution> {
        match self {
            RegularizerSpec::KlToReference { reference } | RegularizerSpec::Bok { reference, .. } => Some(reference),
            _ => None,
        }
    }

    fn uses_log(&self) -> bool {
        !matches!(self, RegularizerSpec::Quadratic)
    }

    /// `dOmega/dq(i)`, or `None` where a logarithm meets `q(i) = 0`.
    fn partial(&self, q: &[f64], i: usize) -> Option<f64> {
        let qi = q[i];
        if self.uses_log() && qi <= 0.0 {
            return None;
        }
        Some(match self {
            RegularizerSpec::NegativeEntropy => 1.0 + qi.ln(),
            RegularizerSpec::Quadratic => qi,
            RegularizerSpec::KlToReference { reference } => (qi / reference.floored(i)).ln() + 1.0,
            RegularizerSpec::Bok { reference, coverage } => {
                (qi / reference.floored(i)).ln() + 1.0
                    - coverage.beta * coverage.weights[i] * crate::bok::hit_derivative(qi, coverage.k)
            }
        })
    }
}

/// Gradient of `Omega` at `q`.
pub fn regularizer_gradient(spec: &RegularizerSpec, q: &SimplexDistribution) -> Result<Vec<f64>> {
    let q = q.as_slice();
    if let Some(reference) = spec.reference() {
        check_len(q.len(), reference.vocab_size())?;
    }
    if let RegularizerSpec::Bok { coverage, .. } = spec {
        check_len(q.len(), coverage.weights.len())?;
    }
    (0..q.len()).map(|i| spec.partial(q, i).ok_or(Error::ZeroProbabilityUnderLogGradient { index: i })).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub eta_hat: f64,
    /// `max |r(v) - eta_hat|` over the support.
    pub active_residual: f64,
    /// `max [r(v) - eta_hat]_+` over in-domain tokens outside the support.
    pub inactive_violation: f64,
    /// Mass placed on tokens outside the constraint domain.
    pub off_domain_mass: f64,
    pub support: SupportMask,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.active_residual.max(self.inactive_violation).max(self.off_domain_mass)
    }

    pub fn is_certified(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Evaluates the optimality conditions at `q`.
///
/// `domain` restricts the problem to a sub-simplex (Top-K, Top-P): tokens
/// outside it are excluded from both conditions and any mass on them is
/// reported as `off_domain_mass`. `lambda = 0` certifies the unregularised
/// (greedy) problem.
pub fn kkt_residual(
    s: &ScoreVector,
    q: &SimplexDistribution,
    lambda: f64,
    spec: &RegularizerSpec,
    support_eps: f64,
    domain: Option<&SupportMask>,
) -> Result<KktReport> {
    let n = s.vocab_size();
    check_len(n, q.vocab_size())?;
    if let Some(reference) = spec.reference() {
        check_len(n, reference.vocab_size())?;
    }
    if let Some(d) = domain {
        check_len(n, d.vocab_size())?;
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    let qs = q.as_slice();
    let in_domain = |i: usize| domain.is_none_or(|d| d.contains(i));

    let support: Vec<bool> = (0..n).map(|i| in_domain(i) && qs[i] > support_eps).collect();
    let support = SupportMask::new(support).map_err(|_| Error::EmptySupport)?;

    // stationarity value r(v); +inf where a log-gradient meets a hard zero
    let stationarity = |i: usize| -> f64 {
        if lambda == 0.0 {
            return s[i];
        }
        match spec.partial(qs, i) {
            Some(d) => s[i] - lambda * d,
            None => f64::INFINITY,
        }
    };

    let active = support.indices();
    let r_active: Vec<f64> = active.iter().map(|&i| stationarity(i)).collect();
    let eta_hat = neumaier_sum(r_active.iter().copied()) / r_active.len() as f64;
    let active_residual = r_active.iter().map(|r| (r - eta_hat).abs()).fold(0.0, f64::max);

    let mut inactive_violation = 0.0_f64;
    let mut off_domain_mass = 0.0;
    for (i, &qi) in qs.iter().enumerate() {
        if !in_domain(i) {
            off_domain_mass += qi;
        } else if !support.contains(i) {
            inactive_violation = inactive_violation.max((stationarity(i) - eta_hat).max(0.0));
        }
    }

    Ok(KktReport { eta_hat, active_residual, inactive_violation, off_domain_mass, support })
}

/// Regulariser, effective `lambda` and domain under which a closed-form
/// decoder's output is optimal.
pub fn closed_form_problem(
    s: &ScoreVector,
    cfg: &DecoderConfig,
) -> Result<(RegularizerSpec, f64, Option<SupportMask>)> {
    let domain = crate::decoders::decoder_domain(s, cfg)?;
    Ok(match cfg.kind {
        DecoderKind::Greedy => (RegularizerSpec::Quadratic, 0.0, None),
        DecoderKind::Softmax | DecoderKind::TopK | DecoderKind::TopP => {
            (RegularizerSpec::NegativeEntropy, cfg.lambda, domain)
        }
        DecoderKind::Sparsemax => (RegularizerSpec::Quadratic, cfg.lambda, None),
        DecoderKind::Bok => return Err(Error::InvalidConfig("bok is certified through its own regulariser".into())),
    })
}

/// Certificate for the output of a closed-form decoder.
pub fn certify_closed_form(s: &ScoreVector, q: &SimplexDistribution, cfg: &DecoderConfig) -> Result<KktReport> {
    let (spec, lambda, domain) = closed_form_problem(s, cfg)?;
    kkt_residual(s, q, lambda, &spec, DEFAULT_SUPPORT_EPS, domain.as_ref())
}
