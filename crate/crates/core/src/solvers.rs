//! Iterative maximisation over the simplex when no closed form exists.
//!
//! Two geometries are provided:
//! - [`pga_solve`]: projected gradient ascent, `q <- P(q + eta * g)` with
//!   the exact Euclidean projection [`project_simplex_l2`];
//! - [`mirror_solve`]: entropic mirror ascent, `q <- q * exp(eta * g) / Z`,
//!   one [`mirror_step`] per iteration.
//!
//! Both stop when the L-infinity change between iterates drops to
//! `stop_tol` or after `max_iters` iterations. When the objective exposes
//! its value and `safeguard` is on, a step that lowers the objective is
//! retried with half the step size (at most [`MAX_HALVINGS`] times); the
//! reduced step size is kept for the rest of the solve.
//!
//! Mirror ascent never revives a zero coordinate. Callers that need full
//! support should floor the starting point (e.g. at 1e-12) and renormalise.

use serde::{Deserialize, Serialize};

use crate::decoders::descending_order;
use crate::error::{Error, Result};
use crate::types::{dot, linf, neumaier_sum, SimplexDistribution};

pub const MAX_HALVINGS: usize = 10;

/// Objective `f` maximised over the simplex.
pub trait SimplexObjective {
    fn gradient(&self, q: &[f64]) -> Vec<f64>;

    fn value(&self, _q: &[f64]) -> Option<f64> {
        None
    }
}

/// Bare gradient oracles (no value, so no safeguard or trace).
impl<F> SimplexObjective for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        self(q)
    }
}

/// `f(q) = <q, s> - lambda * sum q log q`, maximised by `softmax(s / lambda)`.
#[derive(Debug, Clone)]
pub struct EntropyRegularized {
    pub scores: Vec<f64>,
    pub lambda: f64,
}

impl SimplexObjective for EntropyRegularized {
    fn gradient(&self, q: &[f64]) -> Vec<f64> {
        self.scores
            .iter()
            .zip(q)
            .map(|(s, &qv)| if qv > 0.0 { s - self.lambda * (1.0 + qv.ln()) } else { f64::INFINITY })
            .collect()
    }

    fn value(&self, q: &[f64]) -> Option<f64> {
        let neg_ent = neumaier_sum(q.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()));
        Some(dot(q, &self.scores) - self.lambda * neg_ent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    /// Subtract `max(eta * g)` before exponentiating (mirror ascent only).
    pub stabilize: bool,
    pub safeguard: bool,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { step_size: 0.5, max_iters: 200, stop_tol: 1e-8, stabilize: true, safeguard: true, record_trace: false }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("stop_tol must be nonnegative, got {}", self.stop_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveDiagnostics {
    pub iters_used: usize,
    /// L-infinity change made by the last accepted step.
    pub final_delta: f64,
    /// Objective at `q0` and after every accepted step, when recorded.
    pub objective_trace: Option<Vec<f64>>,
    pub converged: bool,
    /// Step size in force when the solve ended.
    pub final_step_size: f64,
    /// True when no step size down to `eta / 2^10` improved the objective.
    pub stalled: bool,
}

/// Euclidean projection of `y` onto the simplex by sort-and-threshold.
pub fn project_simplex_l2(y: &[f64]) -> Result<SimplexDistribution> {
    if y.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(index) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry { index });
    }
    let order = descending_order(y);
    let mut cum = 0.0;
    let mut theta = y[order[0]] - 1.0;
    for (j, &i) in order.iter().enumerate() {
        cum += y[i];
        let candidate = (cum - 1.0) / (j + 1) as f64;
        if y[i] - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    let raw: Vec<f64> = y.iter().map(|v| (v - theta).max(0.0)).collect();
    let total = neumaier_sum(raw.iter().copied());
    Ok(SimplexDistribution::from_raw(raw.into_iter().map(|v| v / total).collect()))
}

/// One entropic mirror-ascent step, `q * exp(eta * g)` renormalised.
///
/// Zero coordinates of `q` stay exactly zero and their gradient entries are
/// ignored. Adding a constant to `g` leaves the result unchanged.
pub fn mirror_step(q: &SimplexDistribution, g: &[f64], eta: f64, stabilize: bool) -> Result<SimplexDistribution> {
    if g.len() != q.vocab_size() {
        return Err(Error::DimensionMismatch { expected: q.vocab_size(), found: g.len() });
    }
    Ok(SimplexDistribution::from_raw(mirror_update(q.as_slice(), g, eta, stabilize)?))
}

fn mirror_update(q: &[f64], g: &[f64], eta: f64, stabilize: bool) -> Result<Vec<f64>> {
    let shift = if stabilize {
        q.iter().zip(g).filter(|(qv, _)| **qv > 0.0).map(|(_, gv)| eta * gv).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    let num: Vec<f64> =
        q.iter().zip(g).map(|(&qv, &gv)| if qv > 0.0 { qv * (eta * gv - shift).exp() } else { 0.0 }).collect();
    let total = neumaier_sum(num.iter().copied());
    if !total.is_finite() {
        return Err(Error::NonFiniteUpdate);
    }
    if total <= 0.0 {
        return Err(Error::AllMassVanished);
    }
    Ok(num.into_iter().map(|v| v / total).collect())
}

/// Projected gradient ascent. Every coordinate of the gradient must be
/// finite, including at zero coordinates.
pub fn pga_solve<O: SimplexObjective + ?Sized>(
    objective: &O,
    q0: &SimplexDistribution,
    cfg: &SolverConfig,
) -> Result<(SimplexDistribution, SolveDiagnostics)> {
    iterate(objective, q0, cfg, false, |q, g, eta| {
        let y: Vec<f64> = q.iter().zip(g).map(|(qv, gv)| qv + eta * gv).collect();
        Ok(project_simplex_l2(&y)?.into_vec())
    })
}

/// Entropic mirror ascent. Only gradient entries on the support of the
/// current iterate need to be finite.
pub fn mirror_solve<O: SimplexObjective + ?Sized>(
    objective: &O,
    q0: &SimplexDistribution,
    cfg: &SolverConfig,
) -> Result<(SimplexDistribution, SolveDiagnostics)> {
    let stabilize = cfg.stabilize;
    iterate(objective, q0, cfg, true, move |q, g, eta| mirror_update(q, g, eta, stabilize))
}

fn iterate<O, S>(
    objective: &O,
    q0: &SimplexDistribution,
    cfg: &SolverConfig,
    support_only: bool,
    step: S,
) -> Result<(SimplexDistribution, SolveDiagnostics)>
where
    O: SimplexObjective + ?Sized,
    S: Fn(&[f64], &[f64], f64) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut q = q0.as_slice().to_vec();
    let mut eta = cfg.step_size;
    let mut current = if cfg.safeguard || cfg.record_trace { objective.value(&q) } else { None };
    let mut trace = (cfg.record_trace && current.is_some()).then(|| vec![current.unwrap()]);
    let mut diag = SolveDiagnostics::default();

    for iter in 1..=cfg.max_iters {
        let g = objective.gradient(&q);
        if g.len() != q.len() {
            return Err(Error::DimensionMismatch { expected: q.len(), found: g.len() });
        }
        let bad = g.iter().zip(&q).any(|(gv, qv)| !gv.is_finite() && (!support_only || *qv > 0.0));
        if bad {
            return Err(Error::NonFiniteGradient { iter });
        }

        let mut candidate = step(&q, &g, eta)?;
        if let (true, Some(f_old)) = (cfg.safeguard, current) {
            let accept = |f_new: Option<f64>| f_new.is_some_and(|f| f >= f_old - 1e-14 * f_old.abs().max(1.0));
            let mut f_new = objective.value(&candidate);
            let mut halvings = 0;
            while !accept(f_new) && halvings < MAX_HALVINGS {
                eta *= 0.5;
                halvings += 1;
                candidate = step(&q, &g, eta)?;
                f_new = objective.value(&candidate);
            }
            if !accept(f_new) {
                diag.stalled = true;
                diag.iters_used = iter;
                break;
            }
            current = f_new;
        }

        let delta = linf(&candidate, &q);
        q = candidate;
        diag.iters_used = iter;
        diag.final_delta = delta;
        if let Some(t) = trace.as_mut() {
            if !cfg.safeguard {
                current = objective.value(&q);
            }
            t.extend(current);
        }
        if delta <= cfg.stop_tol {
            diag.converged = true;
            break;
        }
    }

    diag.final_step_size = eta;
    diag.objective_trace = trace;
    Ok((SimplexDistribution::from_raw(q), diag))
}
