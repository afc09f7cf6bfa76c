use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use simplex_decode::decoders::DecoderKind;
use simplex_decode::harness::run::write_report_to;
use simplex_decode::harness::{
    generate_matrix, read_logits, run_decode, run_sweep, write_logits, write_sweep_csv, HarnessError, LogitFormat,
    LogitMatrix, ReportFormat, RunConfig, RunReport, ScoreFamily, SweepGrid,
};
use simplex_decode::kkt::{CLOSED_FORM_TOL, SOLVER_TOL};
use simplex_decode::WeightScheme;

#[derive(Parser)]
#[command(name = "sxdecode", version, about = "Decoding as optimisation over the probability simplex")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every row of a logit file and write a per-step report.
    Decode(DecodeArgs),
    /// Run a grid of configurations over a logit file, one CSV row per cell.
    Sweep(DecodeArgs),
    /// Decode and check every step's optimality certificate.
    Verify(VerifyArgs),
    /// Decode synthetic score rows and report analytic vs sampled coverage.
    CoverageSim(CoverageSimArgs),
    /// Write a synthetic logit file.
    Gen(GenArgs),
}

#[derive(Args)]
struct Input {
    /// Logit file.
    input: PathBuf,
    /// Input format: jsonl or binary.
    #[arg(long, default_value = "jsonl")]
    format: String,
}

/// Decoder knobs. Every flag takes a comma-separated list; `sweep` crosses
/// the lists, the other commands accept one value each.
#[derive(Args, Default)]
struct Knobs {
    /// JSON document with `run` and (for sweep) `grid` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// greedy, softmax, topk, topp, sparsemax or bok.
    #[arg(long, value_delimiter = ',')]
    decoder: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Logit temperature; scores are logits / tau.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// BoK sample budget.
    #[arg(long = "K", value_delimiter = ',')]
    budget: Vec<u32>,
    #[arg(long = "beta-bar", value_delimiter = ',')]
    beta_bar: Vec<f64>,
    /// uniform, model_prob, top_m:<M> or rank:<gamma>.
    #[arg(long)]
    weights: Option<String>,
    /// BoK mirror-ascent steps J.
    #[arg(long, value_delimiter = ',')]
    steps: Vec<usize>,
    /// Mirror-ascent step size.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo coverage trials per step (0 disables).
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Args)]
struct Output {
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: csv or jsonl.
    #[arg(long = "report-format", default_value = "csv")]
    report_format: String,
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    knobs: Knobs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    knobs: Knobs,
    /// Certificate tolerance (default 1e-8 for closed forms, 1e-6 for bok).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct Synthetic {
    /// peaked, flat or heavy-tail.
    #[arg(long, default_value = "peaked")]
    family: String,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    rows: usize,
    #[arg(long, default_value_t = 4.0)]
    peakedness: f64,
}

#[derive(Args)]
struct CoverageSimArgs {
    #[command(flatten)]
    synthetic: Synthetic,
    #[command(flatten)]
    knobs: Knobs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    synthetic: Synthetic,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output format: jsonl or binary.
    #[arg(long, default_value = "jsonl")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ConfigFile {
    run: RunConfig,
    grid: SweepGrid,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Certificate(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Certificate(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn single<T: Clone>(name: &str, values: &[T]) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(v.clone())),
        _ => Err(usage(format!("--{name} takes a single value outside `sweep`"))),
    }
}

fn override_axis<T: Clone>(axis: &mut Vec<T>, flag: &[T]) {
    if !flag.is_empty() {
        *axis = flag.to_vec();
    }
}

impl Knobs {
    fn load(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
            }
            None => Ok(ConfigFile::default()),
        }
    }

    fn kinds(&self) -> Result<Vec<DecoderKind>> {
        self.decoder.iter().map(|d| d.parse().map_err(|e| usage(format!("{e}")))).collect()
    }

    /// Base configuration: config file, then scalar flags.
    fn run_config(&self, sweep: bool) -> Result<(RunConfig, SweepGrid)> {
        let ConfigFile { run: mut cfg, mut grid } = self.load()?;
        if let Some(w) = &self.weights {
            cfg.bok.weights = w.parse::<WeightScheme>().map_err(|e| usage(format!("{e}")))?;
        }
        if let Some(eta) = self.eta {
            cfg.bok.solver.step_size = eta;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.trials {
            cfg.coverage_trials = t;
        }
        if sweep {
            override_axis(&mut grid.kind, &self.kinds()?);
            override_axis(&mut grid.tau, &self.tau);
            override_axis(&mut grid.lambda, &self.lambda);
            override_axis(&mut grid.k, &self.k);
            override_axis(&mut grid.p, &self.p);
            override_axis(&mut grid.budget, &self.budget);
            override_axis(&mut grid.beta_bar, &self.beta_bar);
            override_axis(&mut grid.steps, &self.steps);
            return Ok((cfg, grid));
        }
        if let Some(kind) = single("decoder", &self.kinds()?)? {
            cfg.decoder.kind = kind;
        }
        if let Some(l) = single("lambda", &self.lambda)? {
            cfg.decoder.lambda = l;
            cfg.bok.lambda = l;
        }
        if let Some(t) = single("tau", &self.tau)? {
            cfg.tau = t;
        }
        if let Some(k) = single("k", &self.k)? {
            cfg.decoder.k = k;
        }
        if let Some(p) = single("p", &self.p)? {
            cfg.decoder.p = p;
        }
        if let Some(b) = single("K", &self.budget)? {
            cfg.bok.k = b;
        }
        if let Some(b) = single("beta-bar", &self.beta_bar)? {
            cfg.bok.beta_bar = b;
        }
        if let Some(j) = single("steps", &self.steps)? {
            cfg.bok.solver.max_iters = j;
        }
        Ok((cfg, SweepGrid::default()))
    }
}

fn parse_format<T: std::str::FromStr<Err = HarnessError>>(s: &str) -> Result<T> {
    s.parse().map_err(|e: HarnessError| usage(e.to_string()))
}

fn load_matrix(input: &Input) -> Result<LogitMatrix> {
    let format: LogitFormat = parse_format(&input.format)?;
    Ok(read_logits(&input.input, format)?)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_report(report: &RunReport, output: &Output) -> Result<()> {
    let format: ReportFormat = parse_format(&output.report_format)?;
    write_report_to(report, sink(&output.out)?, format)?;
    Ok(())
}

fn decode(args: &DecodeArgs) -> Result<()> {
    let (cfg, _) = args.knobs.run_config(false)?;
    let report = run_decode(&load_matrix(&args.input)?, &cfg)?;
    emit_report(&report, &args.output)
}

fn sweep(args: &DecodeArgs) -> Result<()> {
    let (cfg, grid) = args.knobs.run_config(true)?;
    let rows = run_sweep(&load_matrix(&args.input)?, &grid, &cfg)?;
    write_sweep_csv(&rows, sink(&args.output.out)?)?;
    Ok(())
}

/// False for NaN residuals.
fn within(residual: f64, tol: f64) -> bool {
    residual <= tol
}

fn verify(args: &VerifyArgs) -> Result<()> {
    let (cfg, _) = args.knobs.run_config(false)?;
    let tol = args.tol.unwrap_or(if cfg.decoder.kind == DecoderKind::Bok { SOLVER_TOL } else { CLOSED_FORM_TOL });
    let report = run_decode(&load_matrix(&args.input)?, &cfg)?;
    let failing: Vec<_> =
        report.records.iter().filter(|r| !within(r.kkt_active_residual.max(r.kkt_inactive_violation), tol)).collect();
    let max = report.max_residual();
    println!("steps={} max_residual={max:e} tol={tol:e} violations={}", report.records.len(), failing.len());
    for r in &failing {
        println!(
            "step {}: active_residual={:e} inactive_violation={:e}",
            r.step, r.kkt_active_residual, r.kkt_inactive_violation
        );
    }
    if !failing.is_empty() {
        return Err(Failure::Certificate(format!(
            "{} of {} steps exceed tolerance {tol:e}",
            failing.len(),
            report.records.len()
        ))
        .into());
    }
    Ok(())
}

fn synthetic(s: &Synthetic, seed: u64) -> Result<LogitMatrix> {
    let family: ScoreFamily = parse_format(&s.family)?;
    generate_matrix(family, s.rows, s.n, s.peakedness, seed).map_err(|e| usage(e.to_string()))
}

fn coverage_sim(args: &CoverageSimArgs) -> Result<()> {
    let (mut cfg, _) = args.knobs.run_config(false)?;
    if args.knobs.trials.is_none() && cfg.coverage_trials == 0 {
        cfg.coverage_trials = 10_000;
    }
    let matrix = synthetic(&args.synthetic, cfg.seed)?;
    let report = run_decode(&matrix, &cfg)?;
    emit_report(&report, &args.output)
}

fn gen(args: &GenArgs) -> Result<()> {
    let format: LogitFormat = parse_format(&args.format)?;
    let matrix = synthetic(&args.synthetic, args.seed)?;
    write_logits(&matrix, Path::new(&args.out), format)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Usage(_) => 1,
            Failure::Certificate(_) => 3,
        };
    }
    match err.downcast_ref::<HarnessError>() {
        Some(h) if !h.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Decode(a) => decode(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::CoverageSim(a) => coverage_sim(a),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
