use std::io::Write;

use serde::{Deserialize, Serialize};

use super::io::LogitMatrix;
use super::run::{run_decode, RunConfig, RunSummary};
use super::HarnessError;
use crate::decoders::DecoderKind;

/// Values to sweep per axis. An empty axis keeps the base configuration's
/// value. `lambda` sets both the decoder and the BoK anchor weight; `steps`
/// is the BoK iteration budget `J`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub tau: Vec<f64>,
    pub kind: Vec<DecoderKind>,
    pub lambda: Vec<f64>,
    pub k: Vec<usize>,
    pub p: Vec<f64>,
    pub budget: Vec<u32>,
    pub beta_bar: Vec<f64>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub config: RunConfig,
    pub summary: RunSummary,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    /// Every cell, varying the last axis fastest.
    pub fn cells(&self, base: &RunConfig) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for tau in axis(&self.tau, base.tau) {
            for kind in axis(&self.kind, base.decoder.kind) {
                for lambda in axis(&self.lambda, base.decoder.lambda) {
                    for k in axis(&self.k, base.decoder.k) {
                        for p in axis(&self.p, base.decoder.p) {
                            for budget in axis(&self.budget, base.bok.k) {
                                for beta_bar in axis(&self.beta_bar, base.bok.beta_bar) {
                                    for steps in axis(&self.steps, base.bok.solver.max_iters) {
                                        let mut c = base.clone();
                                        c.tau = tau;
                                        c.decoder.kind = kind;
                                        c.decoder.k = k;
                                        c.decoder.p = p;
                                        if !self.lambda.is_empty() {
                                            c.decoder.lambda = lambda;
                                            c.bok.lambda = lambda;
                                        }
                                        c.bok.k = budget;
                                        c.bok.beta_bar = beta_bar;
                                        c.bok.solver.max_iters = steps;
                                        out.push(c);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn run_sweep(matrix: &LogitMatrix, grid: &SweepGrid, base: &RunConfig) -> Result<Vec<SweepRow>, HarnessError> {
    grid.cells(base)
        .into_iter()
        .map(|config| {
            let summary = run_decode(matrix, &config)?.summary();
            Ok(SweepRow { config, summary })
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 17] = [
    "tau",
    "decoder",
    "lambda",
    "k",
    "p",
    "K",
    "beta_bar",
    "steps",
    "rows",
    "mean_entropy_nats",
    "mean_support_size",
    "max_kkt_active_residual",
    "max_kkt_inactive_violation",
    "mean_solver_iters",
    "coverage_analytic",
    "coverage_mc",
    "coverage_mc_stderr",
];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        let (c, s) = (&r.config, &r.summary);
        let lambda = if c.decoder.kind == DecoderKind::Bok { c.bok.lambda } else { c.decoder.lambda };
        w.write_record([
            c.tau.to_string(),
            c.decoder.kind.to_string(),
            lambda.to_string(),
            c.decoder.k.to_string(),
            c.decoder.p.to_string(),
            c.bok.k.to_string(),
            c.bok.beta_bar.to_string(),
            c.bok.solver.max_iters.to_string(),
            s.steps.to_string(),
            s.mean_entropy_nats.to_string(),
            s.mean_support_size.to_string(),
            s.max_kkt_active_residual.to_string(),
            s.max_kkt_inactive_violation.to_string(),
            s.mean_solver_iters.to_string(),
            s.mean_coverage_analytic.to_string(),
            s.mean_coverage_mc.map(|v| v.to_string()).unwrap_or_default(),
            s.coverage_mc_stderr.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bok::BokConfig;
    use crate::decoders::DecoderConfig;
    use crate::harness::synth::{generate_matrix, ScoreFamily};

    fn bok_base() -> RunConfig {
        RunConfig {
            decoder: DecoderConfig { kind: DecoderKind::Bok, ..Default::default() },
            bok: BokConfig::preset(0.05, 0.5),
            ..Default::default()
        }
    }

    #[test]
    fn step_sweep_has_five_rows() {
        let m = generate_matrix(ScoreFamily::Peaked, 3, 16, 4.0, 0).unwrap();
        let grid = SweepGrid { steps: vec![2, 5, 10, 15, 20], ..Default::default() };
        let rows = run_sweep(&m, &grid, &bok_base()).unwrap();
        assert_eq!(rows.len(), 5);
        let iters: Vec<f64> = rows.iter().map(|r| r.summary.mean_solver_iters).collect();
        assert_eq!(iters, vec![2.0, 5.0, 10.0, 15.0, 20.0]);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn singleton_grid_is_run_decode() {
        let m = generate_matrix(ScoreFamily::Flat, 4, 10, 2.0, 1).unwrap();
        let base = RunConfig { coverage_trials: 200, seed: 9, ..Default::default() };
        let rows = run_sweep(&m, &SweepGrid::default(), &base).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].summary, run_decode(&m, &base).unwrap().summary());
    }

    #[test]
    fn coverage_grows_with_beta_bar() {
        let m = generate_matrix(ScoreFamily::Peaked, 6, 24, 5.0, 2).unwrap();
        let mut base = bok_base();
        base.bok.lambda = 1.0;
        base.bok.solver.max_iters = 2000;
        base.bok.solver.stop_tol = 1e-13;
        let grid = SweepGrid { beta_bar: vec![0.0, 0.5, 1.0], ..Default::default() };
        let rows = run_sweep(&m, &grid, &base).unwrap();
        let cov: Vec<f64> = rows.iter().map(|r| r.summary.mean_coverage_analytic).collect();
        assert!(cov.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{cov:?}");
    }
}
