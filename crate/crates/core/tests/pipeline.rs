use proptest::prelude::*;

use simplex_decode::bok::{make_weights, BokConfig, WeightScheme};
use simplex_decode::decoders::{softmax_decode, DecoderConfig, DecoderKind};
use simplex_decode::harness::io::{read_logits, write_logits, LogitFormat};
use simplex_decode::harness::run::{run_decode, RunConfig};
use simplex_decode::harness::synth::{generate_matrix, ScoreFamily};
use simplex_decode::harness::LogitMatrix;
use simplex_decode::solvers::{mirror_solve, SimplexObjective, SolverConfig};
use simplex_decode::types::normalize;
use simplex_decode::{ReferenceDistribution, ScoreVector, SimplexDistribution};

/// f32-representable logits so the binary format is lossless.
fn f32_matrix() -> LogitMatrix {
    let m = generate_matrix(ScoreFamily::HeavyTail, 6, 20, 1.5, 3).unwrap();
    let rows = (0..m.rows()).map(|r| m.row(r).iter().map(|&v| v as f32 as f64).collect()).collect();
    LogitMatrix::new(rows).unwrap()
}

#[test]
fn binary_and_jsonl_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = f32_matrix();
    let (jsonl, bin) = (dir.path().join("m.jsonl"), dir.path().join("m.bin"));
    write_logits(&m, &jsonl, LogitFormat::Jsonl).unwrap();
    write_logits(&m, &bin, LogitFormat::Binary).unwrap();
    let (a, b) = (read_logits(&jsonl, LogitFormat::Jsonl).unwrap(), read_logits(&bin, LogitFormat::Binary).unwrap());
    assert_eq!(a, b);
    for kind in [DecoderKind::Sparsemax, DecoderKind::TopP, DecoderKind::Bok] {
        let cfg = RunConfig { decoder: DecoderConfig::new(kind), coverage_trials: 300, seed: 5, ..Default::default() };
        assert_eq!(run_decode(&a, &cfg).unwrap(), run_decode(&b, &cfg).unwrap());
    }
}

#[test]
fn closed_form_steps_are_certified() {
    let m = generate_matrix(ScoreFamily::Peaked, 8, 40, 4.0, 1).unwrap();
    for kind in
        [DecoderKind::Greedy, DecoderKind::Softmax, DecoderKind::TopK, DecoderKind::TopP, DecoderKind::Sparsemax]
    {
        let cfg =
            RunConfig { decoder: DecoderConfig { kind, k: 5, ..Default::default() }, tau: 0.7, ..Default::default() };
        let report = run_decode(&m, &cfg).unwrap();
        assert!(report.max_residual() <= 1e-8, "{kind}: {}", report.max_residual());
    }
}

#[test]
fn converged_bok_steps_are_certified() {
    let m = generate_matrix(ScoreFamily::Flat, 8, 40, 1.0, 2).unwrap();
    let mut bok = BokConfig::preset(0.05, 0.5);
    bok.solver = SolverConfig { max_iters: 200, stop_tol: 1e-10, step_size: 1.0, ..Default::default() };
    let cfg = RunConfig { decoder: DecoderConfig::new(DecoderKind::Bok), bok, ..Default::default() };
    assert!(run_decode(&m, &cfg).unwrap().max_residual() <= 1e-5);
}

struct Bok<'a> {
    s: &'a ScoreVector,
    p: &'a ReferenceDistribution,
    cfg: &'a BokConfig,
}

impl SimplexObjective for Bok<'_> {
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        let w = make_weights(self.cfg.weights, self.s, self.p).unwrap();
        let q = SimplexDistribution::new(q.to_vec()).unwrap();
        simplex_decode::bok::bok_gradient(&q, self.s, self.p, &w, self.cfg.terms()).unwrap()
    }

    fn value(&self, q: &[f64]) -> Option<f64> {
        let w = make_weights(self.cfg.weights, self.s, self.p).unwrap();
        let q = SimplexDistribution::new(q.to_vec()).unwrap();
        Some(simplex_decode::bok::bok_objective(&q, self.s, self.p, &w, self.cfg.terms()).unwrap())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mirror_trace_is_monotone(
        logits in prop::collection::vec(-4.0f64..4.0, 2..32),
        lambda in 0.05f64..5.0,
        beta_bar in 0.0f64..3.0,
        k in 1u32..16,
        eta in 0.1f64..5.0,
        uniform in any::<bool>(),
    ) {
        let s = ScoreVector::new(logits).unwrap();
        let p = ReferenceDistribution::new(softmax_decode(&s, 1.0).unwrap());
        let cfg = BokConfig {
            k,
            lambda,
            beta_bar,
            weights: if uniform { WeightScheme::Uniform } else { WeightScheme::ModelProb },
            solver: SolverConfig { step_size: eta, max_iters: 50, stop_tol: 0.0, record_trace: true, ..Default::default() },
        };
        let q0 = normalize(p.as_slice()).unwrap();
        let (_, diag) = mirror_solve(&Bok { s: &s, p: &p, cfg: &cfg }, &q0, &cfg.solver).unwrap();
        let trace = diag.objective_trace.unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0), "{trace:?}");
        }
    }

    #[test]
    fn run_records_valid_distributions(seed in 0u64..1000, tau in 0.2f64..3.0) {
        let m = generate_matrix(ScoreFamily::HeavyTail, 3, 16, 2.0, seed).unwrap();
        for kind in [DecoderKind::Softmax, DecoderKind::Sparsemax, DecoderKind::Bok] {
            let report = run_decode(&m, &RunConfig { decoder: DecoderConfig::new(kind), tau, seed, ..Default::default() }).unwrap();
            prop_assert_eq!(report.records.len(), 3);
            for r in &report.records {
                prop_assert!(r.support_size >= 1 && r.chosen_token < 16);
                prop_assert!(r.entropy_nats >= 0.0 && r.entropy_nats <= (16f64).ln() + 1e-12);
            }
        }
    }
}
