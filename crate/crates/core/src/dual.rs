//! Projected subgradient ascent on the risk multiplier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{risk_budget, NoiseModel, RiskConfig, SystemModel};
use crate::risk::{average_cost, constraint_cost, RiskAssessment};
use crate::synthesis::{synthesize, PolicyGains};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    OneOverSqrtK,
    OneOverK,
}

impl StepSchedule {
    /// Step size at iteration `k ≥ 1`.
    pub fn step_size(self, eta0: f64, k: usize) -> f64 {
        let k = k.max(1) as f64;
        match self {
            StepSchedule::Constant => eta0,
            StepSchedule::OneOverSqrtK => eta0 / k.sqrt(),
            StepSchedule::OneOverK => eta0 / k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AscentOptions {
    pub eta0: f64,
    #[serde(default = "default_schedule")]
    pub schedule: StepSchedule,
    pub max_iterations: usize,
    /// Threshold on `|J_c − Λ|`.
    pub tolerance: f64,
    #[serde(default)]
    pub lambda0: f64,
}

fn default_schedule() -> StepSchedule {
    StepSchedule::OneOverSqrtK
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            eta0: 1.0,
            schedule: StepSchedule::OneOverSqrtK,
            max_iterations: 500,
            tolerance: 1e-6,
            lambda0: 0.0,
        }
    }
}

impl AscentOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::InvalidInput(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda0 must be nonnegative, got {}",
                self.lambda0
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualRecord {
    pub k: usize,
    pub lambda: f64,
    pub subgradient: f64,
    pub j_primal: f64,
    pub j_c_total: f64,
    /// `max(0, J_c − Λ)`.
    pub violation: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DualTrace {
    pub records: Vec<DualRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub lambda_star: f64,
    pub budget: f64,
    pub gains: PolicyGains,
    pub assessment: RiskAssessment,
    pub j_primal: f64,
    pub trace: DualTrace,
    pub converged: bool,
    /// `λ*·(J_c − Λ)`.
    pub complementary_slackness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub lambda_next: f64,
    pub gains: PolicyGains,
    pub assessment: RiskAssessment,
}

/// One iteration: synthesize at `λ_k`, evaluate the constraint, then
/// `λ_{k+1} = [λ_k + η_k·d_k]₊`.
pub fn step(model: &SystemModel, noise: &NoiseModel, budget: f64, lambda_k: f64, eta_k: f64) -> Result<StepOutcome> {
    if !(lambda_k >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "multiplier must be nonnegative, got {lambda_k}"
        )));
    }
    if !(eta_k > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {eta_k}")));
    }
    let gains = synthesize(model, noise, lambda_k)?;
    let assessment = constraint_cost(model, noise, &gains.policy, budget)?;
    Ok(StepOutcome {
        lambda_next: project(lambda_k + eta_k * assessment.subgradient),
        gains,
        assessment,
    })
}

fn project(lambda: f64) -> f64 {
    lambda.max(0.0)
}

/// Runs the primal-dual iteration until `|d| ≤ tolerance`, or the
/// constraint is inactive at `λ = 0`, or the iteration budget is spent.
///
/// The returned policy is the one synthesized at the final multiplier. A
/// run that exhausts `max_iterations` is returned with `converged = false`.
pub fn solve(model: &SystemModel, noise: &NoiseModel, risk: &RiskConfig, opts: &AscentOptions) -> Result<SolveResult> {
    opts.check()?;
    let budget = risk_budget(risk, noise, &model.q)?;
    let mut lambda = opts.lambda0;
    let mut trace = DualTrace::default();
    let mut k = 1;
    loop {
        let eta = opts.schedule.step_size(opts.eta0, k);
        let outcome = step(model, noise, budget, lambda, eta)?;
        let d = outcome.assessment.subgradient;
        let j_primal = average_cost(model, noise, &outcome.gains.policy)?.total;
        trace.records.push(DualRecord {
            k,
            lambda,
            subgradient: d,
            j_primal,
            j_c_total: outcome.assessment.j_c_total,
            violation: d.max(0.0),
        });
        log::debug!("dual iteration {k}: lambda = {lambda:.6e}, d = {d:.6e}");

        let converged = d.abs() <= opts.tolerance || (lambda == 0.0 && d < 0.0);
        if converged || k >= opts.max_iterations {
            if !converged {
                log::warn!("dual ascent stopped after {k} iterations with |d| = {:.3e}", d.abs());
            }
            return Ok(SolveResult {
                lambda_star: lambda,
                budget,
                complementary_slackness: lambda * d,
                gains: outcome.gains,
                assessment: outcome.assessment,
                j_primal,
                trace,
                converged,
            });
        }
        lambda = outcome.lambda_next;
        k += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualPoint {
    pub lambda: f64,
    /// `D(λ) = J(λ) + λ·(J_c(λ) − Λ)`.
    pub value: f64,
    pub j_primal: f64,
    pub j_c_total: f64,
}

/// Evaluates the dual function on a sorted grid of multipliers. Grid
/// points are evaluated in parallel; the output keeps the input order.
pub fn dual_function_grid(
    model: &SystemModel,
    noise: &NoiseModel,
    budget: f64,
    lambdas: &[f64],
) -> Result<Vec<DualPoint>> {
    if lambdas.is_empty() {
        return Err(Error::EmptyInput("lambda grid".into()));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidInput(
            "lambda grid values must be finite and nonnegative".into(),
        ));
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("lambda grid must be sorted".into()));
    }
    lambdas
        .par_iter()
        .map(|&lambda| {
            let gains = synthesize(model, noise, lambda)?;
            let assessment = constraint_cost(model, noise, &gains.policy, budget)?;
            let j_primal = average_cost(model, noise, &gains.policy)?.total;
            Ok(DualPoint {
                lambda,
                value: j_primal + lambda * assessment.subgradient,
                j_primal,
                j_c_total: assessment.j_c_total,
            })
        })
        .collect()
}

/// Midpoint concavity on every three consecutive grid points:
/// `D(λ₁) ≥ interpolation of D(λ₀), D(λ₂) at λ₁ − slack·max(1, |D|)`.
///
/// Uses linear interpolation so non-uniform grids are handled.
pub fn is_midpoint_concave(points: &[DualPoint], slack: f64) -> bool {
    concavity_violations(points, slack).is_empty()
}

/// Indices of the middle points that fail the concavity check.
pub fn concavity_violations(points: &[DualPoint], slack: f64) -> Vec<usize> {
    points
        .windows(3)
        .enumerate()
        .filter_map(|(i, w)| {
            let (a, b, c) = (&w[0], &w[1], &w[2]);
            let span = c.lambda - a.lambda;
            if span <= 0.0 {
                return None;
            }
            let t = (b.lambda - a.lambda) / span;
            let chord = (1.0 - t) * a.value + t * c.value;
            let scale = a.value.abs().max(b.value.abs()).max(c.value.abs()).max(1.0);
            (b.value < chord - slack * scale).then_some(i + 1)
        })
        .collect()
}

/// Parses a grid specification `a:b:steps` into `steps` evenly spaced
/// points from `a` to `b` inclusive.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidInput(format!("lambda grid must look like a:b:steps, got '{spec}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || !(start >= 0.0) || !(end >= start) || !end.is_finite() {
        return Err(bad());
    }
    if steps == 1 {
        return Ok(vec![start]);
    }
    let h = (end - start) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| if i + 1 == steps { end } else { start + h * i as f64 })
        .collect())
}
