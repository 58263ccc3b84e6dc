//! Scenario files: a complete experiment (dynamics, cost, noise, risk
//! budget, ascent settings and rollout settings) as one JSON document.
//!
//! Matrices are row-major nested arrays. Unknown fields are rejected at
//! every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual::{parse_lambda_grid, AscentOptions};
use crate::error::{Error, Result};
use crate::linalg::{discretize, ensure_shape, Discretization, Matrix, Vector};
use crate::model::{risk_budget, NoiseFamily, NoiseModel, RiskConfig, SystemModel};
use crate::sim::{Disturbance, InitialState, PlayerSelector, RolloutConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub dx: usize,
    pub du: usize,
    pub n: usize,
}

/// System matrices. With `continuous_time` set they are the generator
/// matrices and are discretized with `dt` and `discretization` on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    #[serde(rename = "A", with = "crate::serde_helpers::matrix")]
    pub a: Matrix,
    #[serde(rename = "A_bar", with = "crate::serde_helpers::matrix")]
    pub a_bar: Matrix,
    #[serde(rename = "B", with = "crate::serde_helpers::matrix")]
    pub b: Matrix,
    #[serde(rename = "B_bar", with = "crate::serde_helpers::matrix")]
    pub b_bar: Matrix,
    #[serde(default)]
    pub continuous_time: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Discretization>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(rename = "Q", with = "crate::serde_helpers::matrix")]
    pub q: Matrix,
    #[serde(rename = "Q_bar", with = "crate::serde_helpers::matrix")]
    pub q_bar: Matrix,
    #[serde(rename = "R", with = "crate::serde_helpers::matrix")]
    pub r: Matrix,
    #[serde(rename = "R_bar", with = "crate::serde_helpers::matrix")]
    pub r_bar: Matrix,
}

/// Noise moments. Gaussian noise derives `M3` and `M4` from `M2` and `Q`,
/// so supplying them is an error; explicit noise requires both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub m1: Vec<f64>,
    #[serde(rename = "M2", with = "crate::serde_helpers::matrix")]
    pub m2: Matrix,
    #[serde(rename = "M3", default, skip_serializing_if = "Option::is_none")]
    pub m3: Option<Vec<f64>>,
    #[serde(rename = "M4", default, skip_serializing_if = "Option::is_none")]
    pub m4: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSpec {
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_initial_state")]
    pub initial_state: InitialState,
    #[serde(default)]
    pub disturbances: Vec<Disturbance>,
}

fn default_seeds() -> usize {
    1
}

fn default_initial_state() -> InitialState {
    InitialState::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub dims: Dims,
    pub dynamics: DynamicsSpec,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    pub risk: RiskConfig,
    #[serde(default)]
    pub ascent: AscentOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<RolloutSpec>,
    /// Default multiplier grid for sweeps, as `a:b:steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("scenario serializes");
        text.push('\n');
        text
    }

    /// Dimension checks that do not need any numerical work.
    pub fn check(&self) -> Result<()> {
        let Dims { dx, du, n } = self.dims;
        if dx == 0 || du == 0 || n == 0 {
            return Err(Error::Parse("dims must all be at least 1".into()));
        }
        let d = &self.dynamics;
        ensure_shape("A", &d.a, dx, dx)?;
        ensure_shape("A_bar", &d.a_bar, dx, dx)?;
        ensure_shape("B", &d.b, dx, du)?;
        ensure_shape("B_bar", &d.b_bar, dx, du)?;
        let c = &self.cost;
        ensure_shape("Q", &c.q, dx, dx)?;
        ensure_shape("Q_bar", &c.q_bar, dx, dx)?;
        ensure_shape("R", &c.r, du, du)?;
        ensure_shape("R_bar", &c.r_bar, du, du)?;
        ensure_shape("M2", &self.noise.m2, dx, dx)?;
        if self.noise.m1.len() != dx {
            return Err(Error::BadShape(format!("m1 must have length {dx}")));
        }
        if d.continuous_time && d.dt.is_none() {
            return Err(Error::Parse("continuous-time dynamics need dt".into()));
        }
        if let Some(grid) = &self.lambda_grid {
            parse_lambda_grid(grid)?;
        }
        self.ascent.check()
    }

    /// Replaces the discretization settings, e.g. from command-line flags.
    pub fn override_discretization(&mut self, dt: Option<f64>, method: Option<Discretization>) {
        if dt.is_some() {
            self.dynamics.dt = dt;
        }
        if method.is_some() {
            self.dynamics.discretization = method;
        }
    }

    pub fn model(&self) -> Result<SystemModel> {
        let d = &self.dynamics;
        let (a, a_bar, b, b_bar) = if d.continuous_time {
            let dt =
                d.dt.ok_or_else(|| Error::Parse("continuous-time dynamics need dt".into()))?;
            let method = d.discretization.unwrap_or(Discretization::Euler);
            let out = discretize(&d.a, &d.a_bar, &d.b, &d.b_bar, dt, method)?;
            (out.a, out.a_bar, out.b, out.b_bar)
        } else {
            (d.a.clone(), d.a_bar.clone(), d.b.clone(), d.b_bar.clone())
        };
        let c = &self.cost;
        SystemModel::new(
            a,
            a_bar,
            b,
            b_bar,
            c.q.clone(),
            c.q_bar.clone(),
            c.r.clone(),
            c.r_bar.clone(),
            self.dims.n,
        )
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let spec = &self.noise;
        let m1 = Vector::from_vec(spec.m1.clone());
        match spec.family {
            NoiseFamily::Gaussian => {
                if spec.m3.is_some() || spec.m4.is_some() {
                    return Err(Error::Parse("gaussian noise derives M3 and M4; omit them".into()));
                }
                NoiseModel::gaussian(m1, spec.m2.clone(), &self.cost.q)
            }
            NoiseFamily::Explicit => {
                let (Some(m3), Some(m4)) = (&spec.m3, spec.m4) else {
                    return Err(Error::Parse("explicit noise needs M3 and M4".into()));
                };
                NoiseModel::explicit(m1, spec.m2.clone(), Vector::from_vec(m3.clone()), m4)
            }
        }
    }

    pub fn budget(&self) -> Result<f64> {
        risk_budget(&self.risk, &self.noise_model()?, &self.cost.q)
    }

    pub fn lambda_grid(&self) -> Result<Option<Vec<f64>>> {
        self.lambda_grid.as_deref().map(parse_lambda_grid).transpose()
    }

    /// Rollout settings for one seed; a scenario without a rollout section
    /// gets a 1000-step zero-start rollout.
    pub fn rollout_config(&self, seed: u64) -> RolloutConfig {
        let mut cfg = RolloutConfig::new(self.dims.n, 1000, seed);
        if let Some(spec) = &self.rollout {
            cfg.horizon = spec.horizon;
            cfg.initial_state = spec.initial_state.clone();
            cfg.disturbances = spec.disturbances.clone();
        }
        cfg
    }

    /// Seed, seed count and burn-in from the rollout section.
    pub fn rollout_seeds(&self) -> (u64, usize, usize) {
        self.rollout
            .as_ref()
            .map_or((0, 1, 0), |r| (r.seed, r.seeds, r.burn_in))
    }
}

fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_row_slice(values))
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

/// Multi-area load frequency control with state
/// `[Δf, ΔP_G, ΔP_tie, ∫z]`.
///
/// The continuous-time matrices are entered as printed together with the
/// published plant parameters. Cost weights and the budget `Λ = 100` are
/// the published ones. The rest is our choice: ten areas, Euler steps of
/// 0.01, unit-free Gaussian noise on `ΔP_G`, no mean-field cost terms,
/// and three 0.05 pulses on `Δf`.
pub fn microgrid() -> Scenario {
    let (d, r_droop, kt, tt, kp, tp, ktie) = (16.66, 1.2e-3, 1.0, 0.3, 0.06, 24.0, 850.0);
    let beta = d + 1.0 / r_droop;
    #[rustfmt::skip]
    let a = Matrix::from_row_slice(4, 4, &[
        -1.0 / tp, kp / tp, -kp / tp, 0.0,
        -kt / (r_droop * tt), -1.0 / tt, 0.0, 0.0,
        0.0, 0.0, 0.0, 1.0,
        beta, 0.0, 1.0, 0.0,
    ]);
    #[rustfmt::skip]
    let a_bar = Matrix::from_row_slice(4, 4, &[
        0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0,
        ktie, 0.0, 0.0, 0.0,
        beta, 0.0, 0.0, 0.0,
    ]);
    let b = Matrix::from_row_slice(4, 1, &[0.0, 0.0, kt / tt, 0.0]);
    let pulse = |time, player| Disturbance {
        time,
        player,
        impulse: Vector::from_row_slice(&[0.05, 0.0, 0.0, 0.0]),
    };
    Scenario {
        name: "microgrid".into(),
        dims: Dims { dx: 4, du: 1, n: 10 },
        dynamics: DynamicsSpec {
            a,
            a_bar,
            b,
            b_bar: Matrix::zeros(4, 1),
            continuous_time: true,
            dt: Some(0.01),
            discretization: Some(Discretization::Euler),
        },
        cost: CostSpec {
            q: diag(&[800.0, 80.0, 80.0, 4000.0]),
            q_bar: Matrix::zeros(4, 4),
            r: scalar(5.0),
            r_bar: scalar(0.0),
        },
        noise: NoiseSpec {
            family: NoiseFamily::Gaussian,
            m1: vec![0.0; 4],
            m2: diag(&[0.0, 1e-4, 0.0, 0.0]),
            m3: None,
            m4: None,
        },
        risk: RiskConfig::Lambda(100.0),
        ascent: AscentOptions {
            eta0: 50.0,
            tolerance: 1e-3,
            ..AscentOptions::default()
        },
        rollout: Some(RolloutSpec {
            horizon: 4000,
            seed: 42,
            seeds: 16,
            burn_in: 0,
            initial_state: InitialState::Zero,
            disturbances: vec![
                pulse(500, PlayerSelector::Index(0)),
                pulse(1500, PlayerSelector::All),
                pulse(2500, PlayerSelector::Index(3)),
            ],
        }),
        lambda_grid: Some("0:5000:50".into()),
    }
}

/// Scalar mean-field instance with biased Gaussian noise and a budget
/// that binds: `J_c` falls from about 4.62 at `λ = 0` towards 4.
pub fn scalar_benchmark() -> Scenario {
    Scenario {
        name: "scalar_benchmark".into(),
        dims: Dims { dx: 1, du: 1, n: 4 },
        dynamics: DynamicsSpec {
            a: scalar(1.0),
            a_bar: scalar(0.1),
            b: scalar(1.0),
            b_bar: scalar(0.2),
            continuous_time: false,
            dt: None,
            discretization: None,
        },
        cost: CostSpec {
            q: scalar(1.0),
            q_bar: scalar(0.5),
            r: scalar(1.0),
            r_bar: scalar(0.3),
        },
        noise: NoiseSpec {
            family: NoiseFamily::Gaussian,
            m1: vec![0.5],
            m2: scalar(1.0),
            m3: None,
            m4: None,
        },
        risk: RiskConfig::Lambda(4.25),
        ascent: AscentOptions::default(),
        rollout: Some(RolloutSpec {
            horizon: 100_000,
            seed: 42,
            seeds: 32,
            burn_in: 10_000,
            initial_state: InitialState::Zero,
            disturbances: Vec::new(),
        }),
        lambda_grid: Some("0:1:50".into()),
    }
}

/// Every bundled scenario, by name.
pub fn builtin() -> Vec<Scenario> {
    vec![microgrid(), scalar_benchmark()]
}
