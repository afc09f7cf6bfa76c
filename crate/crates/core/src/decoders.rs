//! Closed-form decoders.
//!
//! Each decoder is the maximiser of `<q, s> - lambda * Omega(q)` over the
//! simplex (or a sub-simplex fixed by a support constraint):
//!
//! | decoder    | regulariser          | support constraint          |
//! |------------|----------------------|-----------------------------|
//! | greedy     | none (`lambda = 0`)  | none                        |
//! | softmax    | negative entropy     | none                        |
//! | Top-K      | negative entropy     | k highest scores            |
//! | Top-P      | negative entropy     | nucleus of the model dist.  |
//! | sparsemax  | `0.5 * ||q||^2`      | none (sparsity is emergent) |
//!
//! Ties are always broken towards the lowest token index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{neumaier_sum, ReferenceDistribution, ScoreVector, SimplexDistribution, SupportMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Greedy,
    Softmax,
    TopK,
    TopP,
    Sparsemax,
    Bok,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Greedy => "greedy",
            DecoderKind::Softmax => "softmax",
            DecoderKind::TopK => "topk",
            DecoderKind::TopP => "topp",
            DecoderKind::Sparsemax => "sparsemax",
            DecoderKind::Bok => "bok",
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "greedy" => DecoderKind::Greedy,
            "softmax" => DecoderKind::Softmax,
            "topk" | "top-k" => DecoderKind::TopK,
            "topp" | "top-p" | "nucleus" => DecoderKind::TopP,
            "sparsemax" => DecoderKind::Sparsemax,
            "bok" => DecoderKind::Bok,
            other => return Err(Error::InvalidConfig(format!("unknown decoder `{other}`"))),
        })
    }
}

/// Decoder choice and hyperparameters for the closed-form family.
///
/// `nucleus_lambda` is the temperature of the softmax that produces the
/// model distribution ranked by Top-P. When unset it equals `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub lambda: f64,
    pub k: usize,
    pub p: f64,
    pub nucleus_lambda: Option<f64>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { kind: DecoderKind::Softmax, lambda: 1.0, k: 50, p: 0.9, nucleus_lambda: None }
    }
}

impl DecoderConfig {
    pub fn new(kind: DecoderKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.kind != DecoderKind::Greedy {
            check_lambda(self.lambda)?;
        }
        if self.kind == DecoderKind::TopK && (self.k == 0 || self.k > vocab_size) {
            return Err(Error::KOutOfRange { k: self.k, vocab_size });
        }
        if self.kind == DecoderKind::TopP {
            check_p(self.p)?;
            if let Some(l) = self.nucleus_lambda {
                check_lambda(l)?;
            }
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveLambda(lambda))
    }
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::POutOfRange(p))
    }
}

/// Token indices sorted by descending value, lowest index first among ties.
pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

pub fn greedy_decode(s: &ScoreVector) -> SimplexDistribution {
    SimplexDistribution::vertex(s.vocab_size(), s.argmax()).expect("argmax is in range")
}

pub fn softmax_decode(s: &ScoreVector, lambda: f64) -> Result<SimplexDistribution> {
    restricted_softmax(s, &SupportMask::full(s.vocab_size())?, lambda)
}

/// The `k` highest-scoring tokens; boundary ties go to the lowest index.
pub fn select_topk_support(s: &ScoreVector, k: usize) -> Result<SupportMask> {
    let n = s.vocab_size();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, vocab_size: n });
    }
    let order = descending_order(s.as_slice());
    SupportMask::from_indices(n, &order[..k])
}

/// Smallest descending-probability prefix of `p_model` whose mass reaches `p`.
///
/// If round-off keeps the running sum just short of `p` (only possible for
/// `p` within 1e-9 of 1), every token with positive mass is included and
/// zero-mass tokens stay out.
pub fn select_nucleus(p_model: &ReferenceDistribution, p: f64) -> Result<SupportMask> {
    check_p(p)?;
    let probs = p_model.as_slice();
    let order = descending_order(probs);
    let target = p - 1e-12;
    let mut included = vec![false; probs.len()];
    let mut cum = 0.0;
    let mut comp = 0.0;
    let mut reached = false;
    for &i in &order {
        included[i] = true;
        // Kahan step
        let y = probs[i] - comp;
        let t = cum + y;
        comp = (t - cum) - y;
        cum = t;
        if cum >= target {
            reached = true;
            break;
        }
    }
    if !reached {
        for (i, inc) in included.iter_mut().enumerate() {
            *inc = probs[i] > 0.0;
        }
    }
    SupportMask::new(included)
}

/// Softmax of `s / lambda` over the tokens in `mask`, exactly zero elsewhere.
pub fn restricted_softmax(s: &ScoreVector, mask: &SupportMask, lambda: f64) -> Result<SimplexDistribution> {
    check_lambda(lambda)?;
    if mask.vocab_size() != s.vocab_size() {
        return Err(Error::DimensionMismatch { expected: s.vocab_size(), found: mask.vocab_size() });
    }
    if mask.cardinality() == 0 {
        return Err(Error::EmptyMask);
    }
    let scores = s.as_slice();
    let m = (0..scores.len()).filter(|&i| mask.contains(i)).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask.contains(i) { ((v - m) / lambda).exp() } else { 0.0 })
        .collect();
    let z = neumaier_sum(unnorm.iter().copied());
    Ok(SimplexDistribution::from_raw(unnorm.into_iter().map(|u| u / z).collect()))
}

pub fn topk_decode(s: &ScoreVector, k: usize, lambda: f64) -> Result<SimplexDistribution> {
    restricted_softmax(s, &select_topk_support(s, k)?, lambda)
}

/// Top-P: the nucleus is taken from `softmax(s / nucleus_lambda)`, then the
/// softmax at `lambda` is renormalised over it.
pub fn topp_decode(s: &ScoreVector, p: f64, lambda: f64, nucleus_lambda: f64) -> Result<SimplexDistribution> {
    let model = ReferenceDistribution::new(softmax_decode(s, nucleus_lambda)?);
    restricted_softmax(s, &select_nucleus(&model, p)?, lambda)
}

/// Threshold `eta` and active-set size `k*` of the quadratic-regularised
/// decoder.
///
/// Scores are sorted descending with prefix sums `A_k`; the candidate
/// `eta_k = (A_k - lambda) / k` is accepted for the first `k` with
/// `s_(k) > eta_k >= s_(k+1)` (`s_(n+1) = -inf`).
pub fn sparsemax_threshold(s: &ScoreVector, lambda: f64) -> Result<(f64, usize)> {
    check_lambda(lambda)?;
    let scores = s.as_slice();
    let n = scores.len();
    let sorted: Vec<f64> = descending_order(scores).into_iter().map(|i| scores[i]).collect();

    let mut prefix = 0.0;
    let mut comp = 0.0;
    // largest k with s_(k) > eta_k; used only when round-off defeats the
    // two-sided test
    let mut fallback = (sorted[0] - lambda, 1);
    for k in 1..=n {
        let y = sorted[k - 1] - comp;
        let t = prefix + y;
        comp = (t - prefix) - y;
        prefix = t;
        let eta = (prefix - lambda) / k as f64;
        let next = if k < n { sorted[k] } else { f64::NEG_INFINITY };
        if sorted[k - 1] > eta {
            fallback = (eta, k);
            if next <= eta {
                return Ok((eta, k));
            }
        }
    }
    Ok(fallback)
}

pub fn sparsemax_decode(s: &ScoreVector, lambda: f64) -> Result<SimplexDistribution> {
    let (eta, _) = sparsemax_threshold(s, lambda)?;
    let raw: Vec<f64> = s.as_slice().iter().map(|v| ((v - eta) / lambda).max(0.0)).collect();
    // the sum is 1 up to round-off; dividing it out keeps the tolerance
    // independent of the score magnitude
    let total = neumaier_sum(raw.iter().copied());
    Ok(SimplexDistribution::from_raw(raw.into_iter().map(|q| q / total).collect()))
}

/// Dispatches to the closed-form decoder named by `cfg`.
///
/// Returns `InvalidConfig` for [`DecoderKind::Bok`], which needs a solver.
pub fn decode_closed_form(s: &ScoreVector, cfg: &DecoderConfig) -> Result<SimplexDistribution> {
    cfg.validate(s.vocab_size())?;
    match cfg.kind {
        DecoderKind::Greedy => Ok(greedy_decode(s)),
        DecoderKind::Softmax => softmax_decode(s, cfg.lambda),
        DecoderKind::TopK => topk_decode(s, cfg.k, cfg.lambda),
        DecoderKind::TopP => topp_decode(s, cfg.p, cfg.lambda, cfg.nucleus_lambda.unwrap_or(cfg.lambda)),
        DecoderKind::Sparsemax => sparsemax_decode(s, cfg.lambda),
        DecoderKind::Bok => Err(Error::InvalidConfig("bok has no closed form; use bok_decode".into())),
    }
}

/// The support constraint a closed-form decoder optimises over, if any.
pub fn decoder_domain(s: &ScoreVector, cfg: &DecoderConfig) -> Result<Option<SupportMask>> {
    Ok(match cfg.kind {
        DecoderKind::TopK => Some(select_topk_support(s, cfg.k)?),
        DecoderKind::TopP => {
            let model = ReferenceDistribution::new(softmax_decode(s, cfg.nucleus_lambda.unwrap_or(cfg.lambda))?);
            Some(select_nucleus(&model, cfg.p)?)
        }
        _ => None,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::types::validate_simplex;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(greedy_decode(&sv(&[3.0, 2.0, 0.0])).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(greedy_decode(&sv(&[1.0, 1.0, 0.0])).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(greedy_decode(&sv(&[-5.0, -1.0, -9.0])).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn softmax_worked_example() {
        // 60-digit evaluation of exp(s)/sum exp(s)
        let q = softmax_decode(&sv(&[3.0, 2.0, 0.0]), 1.0).unwrap();
        assert_close(q.as_slice(), &[0.705384512698241158, 0.259496460342419117, 0.035119026959339724], 1e-15);
        // a temperature giving roughly (0.6, 0.3, ~0)
        let q = softmax_decode(&sv(&[3.0, 2.0, 0.0]), 1.5).unwrap();
        assert!((q[0] - 0.6).abs() < 0.05 && (q[1] - 0.3).abs() < 0.05 && q[2] < 0.1, "{q:?}");
    }

    #[test]
    fn softmax_constant_scores_uniform() {
        let q = softmax_decode(&sv(&[4.2; 5]), 0.3).unwrap();
        assert_close(q.as_slice(), &[0.2; 5], 1e-15);
    }

    #[test]
    fn softmax_rejects_lambda() {
        assert_eq!(softmax_decode(&sv(&[1.0]), 0.0), Err(Error::NonPositiveLambda(0.0)));
        assert_eq!(softmax_decode(&sv(&[1.0]), -1.0), Err(Error::NonPositiveLambda(-1.0)));
    }

    #[test]
    fn softmax_large_scores_do_not_overflow() {
        let q = softmax_decode(&sv(&[700.0, 699.0, -700.0]), 1.0).unwrap();
        assert!(q.as_slice().iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(q[0], 1.0 / (1.0 + (-1f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn topk_examples() {
        let s = sv(&[3.0, 2.0, 0.0]);
        assert_eq!(select_topk_support(&s, 2).unwrap().indices(), vec![0, 1]);
        assert_eq!(select_topk_support(&sv(&[1.0, 1.0, 0.0]), 1).unwrap().indices(), vec![0]);
        assert_eq!(select_topk_support(&s, 3).unwrap().indices(), vec![0, 1, 2]);
        assert_eq!(select_topk_support(&s, 0), Err(Error::KOutOfRange { k: 0, vocab_size: 3 }));
        assert_eq!(select_topk_support(&s, 4), Err(Error::KOutOfRange { k: 4, vocab_size: 3 }));
    }

    #[test]
    fn nucleus_examples() {
        let p = ReferenceDistribution::from_vec(vec![0.5, 0.3, 0.15, 0.05]).unwrap();
        assert_eq!(select_nucleus(&p, 0.8).unwrap().indices(), vec![0, 1]);
        assert_eq!(select_nucleus(&p, 1.0).unwrap().indices(), vec![0, 1, 2, 3]);
        assert_eq!(select_nucleus(&p, 0.1).unwrap().indices(), vec![0]);
        assert_eq!(select_nucleus(&p, 0.0), Err(Error::POutOfRange(0.0)));
        assert_eq!(select_nucleus(&p, 1.5), Err(Error::POutOfRange(1.5)));
    }

    #[test]
    fn nucleus_excludes_zero_mass() {
        let p = ReferenceDistribution::from_vec(vec![0.0, 0.6, 0.4, 0.0]).unwrap();
        assert_eq!(select_nucleus(&p, 1.0).unwrap().indices(), vec![1, 2]);
    }

    #[test]
    fn nucleus_sorts_by_probability_not_position() {
        let p = ReferenceDistribution::from_vec(vec![0.1, 0.2, 0.7]).unwrap();
        assert_eq!(select_nucleus(&p, 0.75).unwrap().indices(), vec![1, 2]);
    }

    #[test]
    fn restricted_softmax_examples() {
        let s = sv(&[3.0, 2.0, 0.0]);
        let q = restricted_softmax(&s, &SupportMask::from_indices(3, &[0, 1]).unwrap(), 1.0).unwrap();
        // e/(e+1), 1/(e+1)
        assert_close(q.as_slice(), &[0.731058578630004879, 0.268941421369995121, 0.0], 1e-15);
        assert_eq!(q[2], 0.0);

        let full = restricted_softmax(&s, &SupportMask::full(3).unwrap(), 0.7).unwrap();
        assert_eq!(full, softmax_decode(&s, 0.7).unwrap());

        let single = restricted_softmax(&s, &SupportMask::from_indices(3, &[2]).unwrap(), 1.0).unwrap();
        assert_eq!(single.as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sparsemax_threshold_examples() {
        let s = sv(&[3.0, 2.0, 0.0]);
        assert_eq!(sparsemax_threshold(&s, 1.0).unwrap(), (2.0, 1));
        assert_eq!(sparsemax_threshold(&s, 2.0).unwrap(), (1.5, 2));
        let (eta, k) = sparsemax_threshold(&sv(&[0.7; 6]), 3.0).unwrap();
        assert_eq!(k, 6);
        assert_abs_diff_eq!(eta, 0.7 - 0.5, epsilon = 1e-15);
    }

    #[test]
    fn sparsemax_examples() {
        let s = sv(&[3.0, 2.0, 0.0]);
        assert_eq!(sparsemax_decode(&s, 1.0).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert_close(sparsemax_decode(&s, 2.0).unwrap().as_slice(), &[0.75, 0.25, 0.0], 1e-15);
        assert_close(sparsemax_decode(&sv(&[-1.0; 4]), 0.5).unwrap().as_slice(), &[0.25; 4], 1e-15);
    }

    #[test]
    fn dispatch_rejects_bok() {
        let cfg = DecoderConfig::new(DecoderKind::Bok);
        assert!(matches!(decode_closed_form(&sv(&[1.0, 2.0]), &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn kind_parses() {
        assert_eq!("top-k".parse::<DecoderKind>().unwrap(), DecoderKind::TopK);
        assert_eq!("Sparsemax".parse::<DecoderKind>().unwrap(), DecoderKind::Sparsemax);
        assert!("beam".parse::<DecoderKind>().is_err());
    }

    fn scores(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..max_n)
    }

    proptest! {
        #[test]
        fn shift_invariance(v in scores(40), c in -50.0f64..50.0, lambda in 0.1f64..10.0, kfrac in 0.0f64..1.0) {
            let s = sv(&v);
            let shifted = sv(&v.iter().map(|x| x + c).collect::<Vec<_>>());
            let k = 1 + ((v.len() - 1) as f64 * kfrac) as usize;
            assert_close(softmax_decode(&s, lambda).unwrap().as_slice(), softmax_decode(&shifted, lambda).unwrap().as_slice(), 1e-12);
            prop_assert_eq!(greedy_decode(&s), greedy_decode(&shifted));
            let mask = select_topk_support(&s, k).unwrap();
            // float rounding of x + c can merge near-ties, so only compare when gaps are resolvable
            let sorted: Vec<f64> = descending_order(&v).into_iter().map(|i| v[i]).collect();
            let resolvable = sorted.windows(2).all(|w| w[0] - w[1] > 1e-9);
            if resolvable {
                prop_assert_eq!(&mask, &select_topk_support(&shifted, k).unwrap());
            }
            assert_close(
                restricted_softmax(&s, &mask, lambda).unwrap().as_slice(),
                restricted_softmax(&shifted, &mask, lambda).unwrap().as_slice(),
                1e-12,
            );
            let (eta, _) = sparsemax_threshold(&s, lambda).unwrap();
            let (eta_shift, _) = sparsemax_threshold(&shifted, lambda).unwrap();
            prop_assert!((eta_shift - eta - c).abs() <= 1e-9);
            assert_close(sparsemax_decode(&s, lambda).unwrap().as_slice(), sparsemax_decode(&shifted, lambda).unwrap().as_slice(), 1e-9);
        }

        #[test]
        fn low_temperature_is_greedy(v in prop::collection::vec(-10.0f64..10.0, 2..30)) {
            let s = sv(&v);
            let order = descending_order(&v);
            prop_assume!(v[order[0]] - v[order[1]] >= 0.1);
            let tv = softmax_decode(&s, 1e-6).unwrap().total_variation(&greedy_decode(&s));
            prop_assert!(tv <= 1e-3);
        }

        #[test]
        fn sparsemax_normalises(v in scores(64), lambda in 0.1f64..=10.0) {
            let s = sv(&v);
            let (eta, k) = sparsemax_threshold(&s, lambda).unwrap();
            let raw_sum: f64 = v.iter().map(|x| ((x - eta) / lambda).max(0.0)).sum();
            prop_assert!((raw_sum - 1.0).abs() <= 1e-9);
            prop_assert_eq!(sparsemax_decode(&s, lambda).unwrap().support_size(), k);
        }

        #[test]
        fn sparsemax_support_grows_with_lambda(v in scores(40), a in 0.1f64..10.0, b in 0.1f64..10.0) {
            let s = sv(&v);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (_, k_lo) = sparsemax_threshold(&s, lo).unwrap();
            let (_, k_hi) = sparsemax_threshold(&s, hi).unwrap();
            prop_assert!(k_lo <= k_hi);
        }

        #[test]
        fn nucleus_is_minimal(raw in prop::collection::vec(0.0f64..1.0, 1..40), p in 0.01f64..=1.0) {
            prop_assume!(raw.iter().any(|x| *x > 0.0));
            let model = ReferenceDistribution::new(crate::types::normalize(&raw).unwrap());
            let mask = select_nucleus(&model, p).unwrap();
            let probs = model.as_slice();
            let order = descending_order(probs);
            let m = mask.cardinality();
            // the mask is a descending prefix
            let mut prefix = order[..m].to_vec();
            prefix.sort_unstable();
            prop_assert_eq!(mask.indices(), prefix);
            let without_last: f64 = order[..m - 1].iter().map(|&i| probs[i]).sum();
            prop_assert!(without_last < p);
        }

        #[test]
        fn decoders_emit_simplex_points(v in scores(64), lambda in 0.1f64..10.0, kfrac in 0.0f64..1.0, p in 0.05f64..=1.0) {
            let s = sv(&v);
            let k = 1 + ((v.len() - 1) as f64 * kfrac) as usize;
            for kind in [DecoderKind::Greedy, DecoderKind::Softmax, DecoderKind::TopK, DecoderKind::TopP, DecoderKind::Sparsemax] {
                let cfg = DecoderConfig { kind, lambda, k, p, nucleus_lambda: None };
                let q = decode_closed_form(&s, &cfg).unwrap();
                prop_assert!(validate_simplex(q.into_vec(), 1e-9).is_ok());
            }
        }
    }
}
