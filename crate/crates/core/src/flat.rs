//! Flat, primitive-typed decode surface for foreign-language bindings.
//!
//! Requests carry only arrays and scalars. Scores are used as given
//! (`tau = 1`); callers that want a temperature divide beforehand.

use serde::{Deserialize, Serialize};

use crate::bok::{BokConfig, WeightScheme};
use crate::decoders::{DecoderConfig, DecoderKind};
use crate::error::{Error, Result};
use crate::sampling::{sample_token, RngStream};
use crate::solvers::SolverConfig;
use crate::step::decode_logits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatDecodeRequest {
    pub scores: Vec<f64>,
    pub kind: String,
    pub lambda: f64,
    pub k: usize,
    pub p: f64,
    pub nucleus_lambda: Option<f64>,
    /// BoK sample budget.
    pub budget: u32,
    pub beta_bar: f64,
    pub weights: String,
    pub steps: usize,
    pub eta: f64,
    pub seed: Option<u64>,
    pub stream: u64,
}

impl Default for FlatDecodeRequest {
    fn default() -> Self {
        let d = DecoderConfig::default();
        let b = BokConfig::default();
        Self {
            scores: Vec::new(),
            kind: d.kind.name().to_string(),
            lambda: d.lambda,
            k: d.k,
            p: d.p,
            nucleus_lambda: None,
            budget: b.k,
            beta_bar: b.beta_bar,
            weights: "model_prob".to_string(),
            steps: b.solver.max_iters,
            eta: b.solver.step_size,
            seed: None,
            stream: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatDecodeResult {
    pub probs: Vec<f64>,
    pub sampled: Option<usize>,
}

impl FlatDecodeRequest {
    pub fn configs(&self) -> Result<(DecoderConfig, BokConfig)> {
        let kind: DecoderKind = self.kind.parse()?;
        let decoder =
            DecoderConfig { kind, lambda: self.lambda, k: self.k, p: self.p, nucleus_lambda: self.nucleus_lambda };
        let weights: WeightScheme = self.weights.parse()?;
        let bok = BokConfig {
            k: self.budget,
            lambda: self.lambda,
            beta_bar: self.beta_bar,
            weights,
            solver: SolverConfig { step_size: self.eta, max_iters: self.steps, ..SolverConfig::default() },
        };
        Ok((decoder, bok))
    }
}

pub fn decode_step(req: &FlatDecodeRequest) -> Result<FlatDecodeResult> {
    let (decoder, bok) = req.configs()?;
    let out = decode_logits(&req.scores, 1.0, &decoder, Some(&bok))?;
    let sampled = req.seed.map(|seed| sample_token(&out.q, &mut RngStream::new(seed, req.stream)));
    Ok(FlatDecodeResult { probs: out.q.into_vec(), sampled })
}

/// Order-preserving map of [`decode_step`]. All requests must share one
/// vocabulary size; the first length sets it.
pub fn batch_decode(reqs: &[FlatDecodeRequest]) -> Vec<Result<FlatDecodeResult>> {
    let expected = reqs.first().map(|r| r.scores.len());
    reqs.iter()
        .map(|r| match expected {
            Some(n) if r.scores.len() != n => Err(Error::DimensionMismatch { expected: n, found: r.scores.len() }),
            _ => decode_step(r),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::softmax_decode;
    use crate::types::ScoreVector;

    fn req(kind: &str, scores: &[f64]) -> FlatDecodeRequest {
        FlatDecodeRequest { scores: scores.to_vec(), kind: kind.into(), ..Default::default() }
    }

    #[test]
    fn delegates_to_primary() {
        assert_eq!(decode_step(&req("greedy", &[3.0, 2.0, 0.0])).unwrap().probs, vec![1.0, 0.0, 0.0]);
        let s = ScoreVector::new(vec![3.0, 2.0, 0.0]).unwrap();
        assert_eq!(
            decode_step(&req("softmax", &[3.0, 2.0, 0.0])).unwrap().probs,
            softmax_decode(&s, 1.0).unwrap().into_vec()
        );
    }

    #[test]
    fn errors_carry_codes() {
        let r = FlatDecodeRequest { lambda: 0.0, ..req("softmax", &[1.0, 2.0]) };
        let err = decode_step(&r).unwrap_err();
        assert_eq!(err, Error::NonPositiveLambda(0.0));
        assert_eq!(err.code(), Error::NonPositiveLambda(1.0).code());
    }

    #[test]
    fn batch_is_positional() {
        assert!(batch_decode(&[]).is_empty());
        let bad = FlatDecodeRequest { lambda: -1.0, ..req("softmax", &[0.0, 1.0]) };
        let out =
            batch_decode(&[req("softmax", &[0.0, 1.0]), bad, req("sparsemax", &[0.0, 1.0]), req("softmax", &[1.0])]);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
        assert!(matches!(out[3], Err(Error::DimensionMismatch { .. })));
        assert_eq!(out[2].as_ref().unwrap(), &decode_step(&req("sparsemax", &[0.0, 1.0])).unwrap());
    }

    #[test]
    fn sampling_is_seeded() {
        let r = FlatDecodeRequest { seed: Some(4), stream: 1, ..req("softmax", &[0.3, 0.1, 0.9]) };
        assert_eq!(decode_step(&r).unwrap().sampled, decode_step(&r).unwrap().sampled);
    }
}
