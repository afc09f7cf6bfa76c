//! One decoding step: raw logits in, distribution and certificate out.
//!
//! Scores are `s = logits / tau` and the model distribution is
//! `p = softmax(s)`. Closed-form decoders act on `s`; BoK acts on `s`
//! anchored to `p`.

use crate::bok::{bok_decode_with_weights, make_weights, BokConfig, WeightVector};
use crate::decoders::{decode_closed_form, softmax_decode, DecoderConfig, DecoderKind};
use crate::error::Result;
use crate::kkt::{certify_closed_form, kkt_residual, KktReport, RegularizerSpec, DEFAULT_SUPPORT_EPS};
use crate::solvers::SolveDiagnostics;
use crate::types::{ReferenceDistribution, ScoreVector, SimplexDistribution};

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub scores: ScoreVector,
    pub reference: ReferenceDistribution,
    pub q: SimplexDistribution,
    /// Weights of the coverage term: the BoK weights, or `w = p` otherwise.
    pub weights: WeightVector,
    pub certificate: KktReport,
    pub solver: Option<SolveDiagnostics>,
}

impl StepOutput {
    pub fn solver_iters(&self) -> usize {
        self.solver.as_ref().map_or(0, |d| d.iters_used)
    }
}

/// Temperature-scaled scores and the model distribution they induce.
pub fn prepare_scores(logits: &[f64], tau: f64) -> Result<(ScoreVector, ReferenceDistribution)> {
    let s = ScoreVector::new(logits.to_vec())?.scaled(tau)?;
    let p = ReferenceDistribution::new(softmax_decode(&s, 1.0)?);
    Ok((s, p))
}

/// Decodes one row of logits. `bok` is used when `decoder.kind` is BoK
/// (defaults apply when absent).
pub fn decode_logits(logits: &[f64], tau: f64, decoder: &DecoderConfig, bok: Option<&BokConfig>) -> Result<StepOutput> {
    let (s, p) = prepare_scores(logits, tau)?;
    if decoder.kind == DecoderKind::Bok {
        let default = BokConfig::default();
        let cfg = bok.unwrap_or(&default);
        let w = make_weights(cfg.weights, &s, &p)?;
        let (q, diag) = bok_decode_with_weights(&s, &p, &w, cfg)?;
        let spec = RegularizerSpec::bok(p.clone(), w.clone(), cfg.k, cfg.beta_bar, cfg.lambda)?;
        let certificate = kkt_residual(&s, &q, cfg.lambda, &spec, DEFAULT_SUPPORT_EPS, None)?;
        return Ok(StepOutput { scores: s, reference: p, q, weights: w, certificate, solver: Some(diag) });
    }
    let q = decode_closed_form(&s, decoder)?;
    let certificate = certify_closed_form(&s, &q, decoder)?;
    let weights = WeightVector::new(p.as_slice().to_vec())?;
    Ok(StepOutput { scores: s, reference: p, q, weights, certificate, solver: None })
}
