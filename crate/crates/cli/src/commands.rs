use std::path::{Path, PathBuf};

use log::{info, warn};
use mfrlqr::dual::{self, concavity_violations, dual_function_grid, parse_lambda_grid, DualPoint, SolveResult};
use mfrlqr::error::Error;
use mfrlqr::linalg::Discretization;
use mfrlqr::model::{validate as check_assumptions, NoiseModel, SystemModel};
use mfrlqr::risk::{average_cost, constraint_cost};
use mfrlqr::scenario::{self, Scenario};
use mfrlqr::sim::{estimate_costs, rollout_seeds, Estimate, GaussianSampler};
use mfrlqr::synthesis::{risk_neutral, AffinePolicy};
use serde::{Deserialize, Serialize};

use crate::output::{write_dual, write_json, write_trace, write_trajectory};

/// Slack used by the sweep's concavity flag.
const CONCAVITY_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Assumptions(String),
    #[error("dual ascent stopped after {iterations} iterations without meeting the tolerance (outputs written)")]
    NotConverged { iterations: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("could not write output: {0}")]
    Output(String),
    #[error("{0}")]
    Usage(String),
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 assumption failure, 2 bad input, 3 dual ascent not converged,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Assumptions(_) => 1,
            CliError::NotConverged { .. } => 3,
            CliError::Io { .. } | CliError::Output(_) | CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::NotPositiveDefinite { .. } | Error::NotStabilizable { .. } => 1,
                Error::NonConvergent { .. }
                | Error::UnstableClosedLoop { .. }
                | Error::SingularSystem(_)
                | Error::NonFiniteState { .. } => 4,
                _ => 2,
            },
        }
    }
}

/// Policy file written by `solve` and read by `simulate --gains`.
#[derive(Serialize, Deserialize)]
struct GainsFile {
    #[serde(flatten)]
    policy: AffinePolicy,
    lambda_star: f64,
}

struct Loaded {
    scenario: Scenario,
    model: SystemModel,
    noise: NoiseModel,
}

fn load(path: &Path, dt: Option<f64>, method: Option<Discretization>) -> Result<Loaded, CliError> {
    let mut scenario = Scenario::load(path)?;
    scenario.override_discretization(dt, method);
    let model = scenario.model()?;
    let noise = scenario.noise_model()?;
    info!(
        "loaded scenario '{}' (dx={}, du={}, n={})",
        scenario.name,
        model.dx(),
        model.du(),
        model.n_players
    );
    Ok(Loaded { scenario, model, noise })
}

fn load_validated(path: &Path, dt: Option<f64>, method: Option<Discretization>) -> Result<Loaded, CliError> {
    let loaded = load(path, dt, method)?;
    let report = check_assumptions(&loaded.model, &loaded.noise)?;
    if !report.passed() {
        return Err(CliError::Assumptions(report.to_string().trim_end().to_string()));
    }
    Ok(loaded)
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

pub fn validate(path: &Path, dt: Option<f64>, method: Option<Discretization>) -> Result<(), CliError> {
    let loaded = load(path, dt, method)?;
    let report = check_assumptions(&loaded.model, &loaded.noise)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<String> = report
            .failures()
            .map(|c| format!("Assumption {} ({})", c.assumption.number(), c.name))
            .collect();
        Err(CliError::Assumptions(format!("failed: {}", names.join(", "))))
    }
}

fn run_solve(loaded: &Loaded) -> Result<SolveResult, CliError> {
    let budget = loaded.scenario.budget()?;
    info!("risk budget {budget}");
    Ok(dual::solve(
        &loaded.model,
        &loaded.noise,
        &loaded.scenario.risk,
        &loaded.scenario.ascent,
    )?)
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    scenario: &'a str,
    budget: f64,
    lambda_star: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "J_c_total")]
    j_c_total: f64,
    iterations: usize,
    converged: bool,
    complementary_slackness: f64,
}

pub fn solve(path: &Path, out: &Path, dt: Option<f64>, method: Option<Discretization>) -> Result<(), CliError> {
    let loaded = load_validated(path, dt, method)?;
    let result = run_solve(&loaded)?;
    create_dir(out)?;
    write_trace(&out.join("trace.csv"), &result.trace)?;
    let gains = GainsFile {
        policy: result.gains.policy.clone(),
        lambda_star: result.lambda_star,
    };
    write_json(&out.join("gains.json"), &gains)?;
    let iterations = result.trace.records.len();
    write_json(
        &out.join("summary.json"),
        &SolveSummary {
            scenario: &loaded.scenario.name,
            budget: result.budget,
            lambda_star: result.lambda_star,
            j: result.j_primal,
            j_c_total: result.assessment.j_c_total,
            iterations,
            converged: result.converged,
            complementary_slackness: result.complementary_slackness,
        },
    )?;
    println!(
        "lambda* = {}  J = {}  J_c = {}  budget = {}  iterations = {}",
        result.lambda_star, result.j_primal, result.assessment.j_c_total, result.budget, iterations
    );
    if result.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged { iterations })
    }
}

pub enum PolicyChoice {
    File(PathBuf),
    RiskNeutral,
    Both,
}

#[derive(Serialize)]
struct PolicySummary {
    policy: String,
    trajectory_file: String,
    #[serde(rename = "J_hat")]
    j_hat: Estimate,
    #[serde(rename = "J_c_hat")]
    j_c_hat: Estimate,
    /// Empirical risk before removing the policy-independent offset.
    raw_risk_hat: Estimate,
    peak_state_deviation: Vec<f64>,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "J_c_total")]
    j_c_total: f64,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    scenario: &'a str,
    seed: u64,
    seeds: usize,
    horizon: usize,
    burn_in: usize,
    policies: Vec<PolicySummary>,
}

pub fn simulate(
    path: &Path,
    out: &Path,
    choice: PolicyChoice,
    seed: Option<u64>,
    seeds: Option<usize>,
    dt: Option<f64>,
    method: Option<Discretization>,
) -> Result<(), CliError> {
    let loaded = load_validated(path, dt, method)?;
    let (default_seed, default_seeds, burn_in) = loaded.scenario.rollout_seeds();
    let seed = seed.unwrap_or(default_seed);
    let seeds = seeds.unwrap_or(default_seeds);
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let cfg = loaded.scenario.rollout_config(seed);
    if burn_in >= cfg.horizon {
        return Err(CliError::Usage(format!(
            "burn-in {burn_in} leaves no samples in a {}-step horizon",
            cfg.horizon
        )));
    }

    let policies: Vec<(&str, &str, AffinePolicy)> = match choice {
        PolicyChoice::File(gains) => {
            let text = std::fs::read_to_string(&gains).map_err(|e| CliError::io(&gains, e))?;
            let file: GainsFile =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", gains.display())))?;
            vec![("from_file", "trajectory.csv", file.policy)]
        }
        PolicyChoice::RiskNeutral => vec![(
            "risk_neutral",
            "trajectory.csv",
            risk_neutral(&loaded.model, &loaded.noise)?.policy,
        )],
        PolicyChoice::Both => {
            let solved = run_solve(&loaded)?;
            if !solved.converged {
                warn!("dual ascent did not converge; simulating the last iterate");
            }
            vec![
                ("risk_constrained", "trajectory.csv", solved.gains.policy),
                (
                    "risk_neutral",
                    "trajectory_risk_neutral.csv",
                    risk_neutral(&loaded.model, &loaded.noise)?.policy,
                ),
            ]
        }
    };

    create_dir(out)?;
    let sampler = GaussianSampler::new(&loaded.noise)?;
    let budget = loaded.scenario.budget()?;
    let mut summaries = Vec::new();
    for (name, file, policy) in policies {
        info!("simulating {name} policy over {seeds} seed(s)");
        let trajectories = rollout_seeds(&loaded.model, &loaded.noise, &sampler, &policy, &cfg, seeds)?;
        write_trajectory(&out.join(file), &trajectories[0])?;
        let est = estimate_costs(&trajectories, burn_in)?;
        let j_c_total = constraint_cost(&loaded.model, &loaded.noise, &policy, budget)?.j_c_total;
        let j = average_cost(&loaded.model, &loaded.noise, &policy)?.total;
        println!(
            "{name}: J_hat = {} ± {}  J_c_hat = {} ± {}  peak |x0| = {}",
            est.j_hat.mean, est.j_hat.stderr, est.j_c_hat.mean, est.j_c_hat.stderr, est.peak_state_deviation[0]
        );
        summaries.push(PolicySummary {
            policy: name.to_string(),
            trajectory_file: file.to_string(),
            j_hat: est.j_hat,
            j_c_hat: est.j_c_hat,
            raw_risk_hat: est.raw_risk_hat,
            peak_state_deviation: est.peak_state_deviation,
            j,
            j_c_total,
        });
    }
    write_json(
        &out.join("summary.json"),
        &SimulateSummary {
            scenario: &loaded.scenario.name,
            seed,
            seeds,
            horizon: cfg.horizon,
            burn_in,
            policies: summaries,
        },
    )
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    scenario: &'a str,
    budget: f64,
    points: usize,
    argmax_lambda: f64,
    max_value: f64,
    concave: bool,
    concavity_violations: Vec<f64>,
}

pub fn sweep(
    path: &Path,
    out: &Path,
    grid: Option<&str>,
    dt: Option<f64>,
    method: Option<Discretization>,
) -> Result<(), CliError> {
    let loaded = load_validated(path, dt, method)?;
    let lambdas = match grid {
        Some(spec) => parse_lambda_grid(spec)?,
        None => loaded
            .scenario
            .lambda_grid()?
            .ok_or_else(|| CliError::Usage("scenario has no lambda_grid; pass --lambda-grid a:b:steps".into()))?,
    };
    let budget = loaded.scenario.budget()?;
    let points = dual_function_grid(&loaded.model, &loaded.noise, budget, &lambdas)?;
    create_dir(out)?;
    write_dual(&out.join("dual.csv"), &points)?;
    let best: &DualPoint = points
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("grid is non-empty");
    let bad: Vec<f64> = concavity_violations(&points, CONCAVITY_SLACK)
        .into_iter()
        .map(|i| points[i].lambda)
        .collect();
    println!(
        "argmax lambda = {}  D = {}  concave = {}",
        best.lambda,
        best.value,
        bad.is_empty()
    );
    write_json(
        &out.join("summary.json"),
        &SweepSummary {
            scenario: &loaded.scenario.name,
            budget,
            points: points.len(),
            argmax_lambda: best.lambda,
            max_value: best.value,
            concave: bad.is_empty(),
            concavity_violations: bad,
        },
    )
}

pub fn generate(name: &str, out: &Path) -> Result<(), CliError> {
    let all = scenario::builtin();
    let chosen: Vec<&Scenario> = all.iter().filter(|s| name == "all" || s.name == name).collect();
    if chosen.is_empty() {
        let names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        return Err(CliError::Usage(format!(
            "unknown scenario '{name}'; known: {}",
            names.join(", ")
        )));
    }
    create_dir(out)?;
    for s in chosen {
        let path = out.join(format!("{}.json", s.name));
        std::fs::write(&path, s.to_json()).map_err(|e| CliError::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
