use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::LogitMatrix;
use super::HarnessError;
use crate::bok::{coverage_utility, BokConfig};
use crate::decoders::{DecoderConfig, DecoderKind};
use crate::sampling::{estimate_coverage, sample_token, RngStream};
use crate::step::decode_logits;
use crate::types::{entropy, validate_simplex, SIMPLEX_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub decoder: DecoderConfig,
    /// Used when `decoder.kind` is BoK; its `k` and weights also define the
    /// coverage columns for every decoder.
    pub bok: BokConfig,
    pub tau: f64,
    pub seed: u64,
    /// Monte-Carlo trials per step for the empirical coverage; 0 skips it.
    pub coverage_trials: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { decoder: DecoderConfig::default(), bok: BokConfig::default(), tau: 1.0, seed: 0, coverage_trials: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: i64,
    pub decoder: DecoderKind,
    pub chosen_token: usize,
    pub support_size: usize,
    #[serde(with = "lenient")]
    pub entropy_nats: f64,
    #[serde(with = "lenient")]
    pub kkt_active_residual: f64,
    #[serde(with = "lenient")]
    pub kkt_inactive_violation: f64,
    pub solver_iters: usize,
    #[serde(with = "lenient")]
    pub coverage_analytic: f64,
    pub coverage_mc: Option<f64>,
    pub coverage_mc_stderr: Option<f64>,
}

pub const CSV_COLUMNS: [&str; 11] = [
    "step",
    "decoder",
    "chosen_token",
    "support_size",
    "entropy_nats",
    "kkt_active_residual",
    "kkt_inactive_violation",
    "solver_iters",
    "coverage_analytic",
    "coverage_mc",
    "coverage_mc_stderr",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub mean_entropy_nats: f64,
    pub mean_support_size: f64,
    pub max_kkt_active_residual: f64,
    pub max_kkt_inactive_violation: f64,
    pub mean_solver_iters: f64,
    pub mean_coverage_analytic: f64,
    pub mean_coverage_mc: Option<f64>,
    /// Standard error of `mean_coverage_mc`, treating steps as independent.
    pub coverage_mc_stderr: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut n, mut total) = (0usize, 0.0);
    for v in values {
        n += 1;
        total += v;
    }
    if n == 0 {
        f64::NAN
    } else {
        total / n as f64
    }
}

impl RunReport {
    pub fn summary(&self) -> RunSummary {
        let r = &self.records;
        let n = r.len() as f64;
        let mc: Option<Vec<(f64, f64)>> = r.iter().map(|x| Some((x.coverage_mc?, x.coverage_mc_stderr?))).collect();
        let mc = mc.filter(|v| !v.is_empty());
        RunSummary {
            steps: r.len(),
            mean_entropy_nats: mean(r.iter().map(|x| x.entropy_nats)),
            mean_support_size: mean(r.iter().map(|x| x.support_size as f64)),
            max_kkt_active_residual: r.iter().map(|x| x.kkt_active_residual).fold(0.0, f64::max),
            max_kkt_inactive_violation: r.iter().map(|x| x.kkt_inactive_violation).fold(0.0, f64::max),
            mean_solver_iters: mean(r.iter().map(|x| x.solver_iters as f64)),
            mean_coverage_analytic: mean(r.iter().map(|x| x.coverage_analytic)),
            mean_coverage_mc: mc.as_ref().map(|v| mean(v.iter().map(|x| x.0))),
            coverage_mc_stderr: mc.as_ref().map(|v| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt() / n),
        }
    }

    /// Largest certificate residual over all steps.
    pub fn max_residual(&self) -> f64 {
        let s = self.summary();
        s.max_kkt_active_residual.max(s.max_kkt_inactive_violation)
    }
}

/// Decodes every row. Rows run in parallel; row `r` samples from stream
/// `r` of `cfg.seed`, so output does not depend on scheduling.
pub fn run_decode(matrix: &LogitMatrix, cfg: &RunConfig) -> Result<RunReport, HarnessError> {
    if !(cfg.tau > 0.0) || !cfg.tau.is_finite() {
        return Err(HarnessError::Decode(crate::error::Error::InvalidConfig(format!(
            "tau must be positive, got {}",
            cfg.tau
        ))));
    }
    let records =
        (0..matrix.rows()).into_par_iter().map(|r| decode_row(matrix, r, cfg)).collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport { records })
}

fn decode_row(matrix: &LogitMatrix, r: usize, cfg: &RunConfig) -> Result<StepRecord, HarnessError> {
    let out = decode_logits(matrix.row(r), cfg.tau, &cfg.decoder, Some(&cfg.bok))?;
    let q = validate_simplex(out.q.into_vec(), SIMPLEX_TOL)?;
    let mut rng = RngStream::new(cfg.seed, r as u64);
    let chosen_token = sample_token(&q, &mut rng);
    let k = cfg.bok.k;
    let weights = if cfg.decoder.kind == DecoderKind::Bok {
        out.weights
    } else {
        crate::bok::make_weights(cfg.bok.weights, &out.scores, &out.reference)?
    };
    let coverage_analytic = coverage_utility(&q, &weights, k)?;
    let mc = if cfg.coverage_trials > 0 {
        Some(estimate_coverage(&q, &weights, k, cfg.coverage_trials, &mut rng)?)
    } else {
        None
    };
    let iters = out.solver.as_ref().map_or(0, |d| d.iters_used);
    Ok(StepRecord {
        step: matrix.step(r),
        decoder: cfg.decoder.kind,
        chosen_token,
        support_size: q.support_size(),
        entropy_nats: entropy(&q),
        kkt_active_residual: out.certificate.active_residual,
        kkt_inactive_violation: out.certificate.inactive_violation,
        solver_iters: iters,
        coverage_analytic,
        coverage_mc: mc.map(|m| m.mean),
        coverage_mc_stderr: mc.map(|m| m.std_error),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json" => Ok(Self::Jsonl),
            other => Err(HarnessError::Malformed(format!("unknown report format `{other}`"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report_to<W: Write>(report: &RunReport, out: W, format: ReportFormat) -> Result<(), HarnessError> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for x in &report.records {
                w.write_record([
                    x.step.to_string(),
                    x.decoder.to_string(),
                    x.chosen_token.to_string(),
                    x.support_size.to_string(),
                    x.entropy_nats.to_string(),
                    x.kkt_active_residual.to_string(),
                    x.kkt_inactive_violation.to_string(),
                    x.solver_iters.to_string(),
                    x.coverage_analytic.to_string(),
                    opt(x.coverage_mc),
                    opt(x.coverage_mc_stderr),
                ])?;
            }
            w.flush()?;
        }
        ReportFormat::Jsonl => {
            let mut w = BufWriter::new(out);
            for x in &report.records {
                serde_json::to_writer(&mut w, x)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn write_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<(), HarnessError> {
    write_report_to(report, File::create(path)?, format)
}

pub fn read_report_jsonl(path: &Path) -> Result<RunReport, HarnessError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| HarnessError::Malformed(format!("line {}: {e}", i + 1)))?);
    }
    Ok(RunReport { records })
}

/// JSON has no infinities; non-finite values travel as strings.
mod lenient {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> LogitMatrix {
        LogitMatrix::new(vec![vec![3.0, 2.0, 0.0], vec![0.0, 1.0, 5.0], vec![2.0, 2.5, -1.0]]).unwrap()
    }

    #[test]
    fn greedy_picks_argmax() {
        let cfg = RunConfig { decoder: DecoderConfig::new(DecoderKind::Greedy), ..Default::default() };
        let report = run_decode(&matrix(), &cfg).unwrap();
        let chosen: Vec<usize> = report.records.iter().map(|r| r.chosen_token).collect();
        assert_eq!(chosen, vec![0, 2, 1]);
        assert!(report.records.iter().all(|r| r.support_size == 1 && r.solver_iters == 0));
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = LogitMatrix::new(vec![vec![3.0, 2.0, 0.0]; 16]).unwrap();
        let cfg = RunConfig { seed: 17, ..Default::default() };
        let a = run_decode(&m, &cfg).unwrap();
        assert_eq!(a, run_decode(&m, &cfg).unwrap());
        // rows use distinct streams
        let tokens: std::collections::HashSet<usize> = a.records.iter().map(|r| r.chosen_token).collect();
        assert!(tokens.len() > 1);
    }

    #[test]
    fn bok_preset_uses_five_steps() {
        let cfg = RunConfig {
            decoder: DecoderConfig { kind: DecoderKind::Bok, ..Default::default() },
            bok: BokConfig::preset(0.01, 0.1),
            ..Default::default()
        };
        let report = run_decode(&matrix(), &cfg).unwrap();
        assert!(report.records.iter().all(|r| r.solver_iters == 5));
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_report_to(&RunReport::default(), &mut buf, ReportFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn three_steps_three_rows() {
        let cfg = RunConfig { coverage_trials: 100, ..Default::default() };
        let report = run_decode(&matrix(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_report_to(&report, &mut buf, ReportFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn jsonl_round_trip() {
        let cfg =
            RunConfig { decoder: DecoderConfig::new(DecoderKind::TopK), coverage_trials: 50, ..Default::default() };
        let mut report = run_decode(
            &LogitMatrix::new(vec![vec![1.0, 0.5, -0.2, 3.0]; 2]).unwrap(),
            &RunConfig { decoder: DecoderConfig { k: 2, ..cfg.decoder.clone() }, ..cfg },
        )
        .unwrap();
        report.records[0].kkt_inactive_violation = f64::INFINITY;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        write_report(&report, &path, ReportFormat::Jsonl).unwrap();
        assert_eq!(read_report_jsonl(&path).unwrap(), report);
    }

    #[test]
    fn summary_aggregates() {
        let cfg = RunConfig { decoder: DecoderConfig::new(DecoderKind::Greedy), ..Default::default() };
        let s = run_decode(&matrix(), &cfg).unwrap().summary();
        assert_eq!(s.steps, 3);
        assert_eq!(s.mean_support_size, 1.0);
        assert_eq!(s.mean_entropy_nats, 0.0);
        assert_eq!(s.mean_coverage_mc, None);
    }
}
