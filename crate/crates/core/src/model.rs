//! Mean-field system, noise and risk-budget data, plus the derived
//! matrices used by synthesis and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_finite, ensure_shape, ensure_square, is_positive_definite, is_positive_semidefinite, solve_dare, Matrix,
    SolverOptions, Vector,
};

/// Per-player dynamics `x' = Ax + Bu + Āx̄ + B̄ū + w` with the stage cost
/// `x̄ᵀQ̄x̄ + ūᵀR̄ū + (1/n)Σ (xᵀQx + uᵀRu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub a: Matrix,
    pub a_bar: Matrix,
    pub b: Matrix,
    pub b_bar: Matrix,
    pub q: Matrix,
    pub q_bar: Matrix,
    pub r: Matrix,
    pub r_bar: Matrix,
    pub n_players: usize,
}

impl SystemModel {
    /// Checks dimensions and finiteness. Definiteness and stabilizability
    /// are reported by [`validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        a_bar: Matrix,
        b: Matrix,
        b_bar: Matrix,
        q: Matrix,
        q_bar: Matrix,
        r: Matrix,
        r_bar: Matrix,
        n_players: usize,
    ) -> Result<Self> {
        let dx = ensure_square("A", &a)?;
        let du = b.ncols();
        if du == 0 {
            return Err(Error::BadShape("B must have at least one column".into()));
        }
        ensure_shape("A_bar", &a_bar, dx, dx)?;
        ensure_shape("B", &b, dx, du)?;
        ensure_shape("B_bar", &b_bar, dx, du)?;
        ensure_shape("Q", &q, dx, dx)?;
        ensure_shape("Q_bar", &q_bar, dx, dx)?;
        ensure_shape("R", &r, du, du)?;
        ensure_shape("R_bar", &r_bar, du, du)?;
        for (name, m) in [
            ("A", &a),
            ("A_bar", &a_bar),
            ("B", &b),
            ("B_bar", &b_bar),
            ("Q", &q),
            ("Q_bar", &q_bar),
            ("R", &r),
            ("R_bar", &r_bar),
        ] {
            ensure_finite(name, m)?;
        }
        if n_players == 0 {
            return Err(Error::InvalidInput("n_players must be at least 1".into()));
        }
        Ok(Self {
            a,
            a_bar,
            b,
            b_bar,
            q,
            q_bar,
            r,
            r_bar,
            n_players,
        })
    }

    /// A decoupled model: no mean-field coupling and no mean-field cost.
    pub fn decoupled(a: Matrix, b: Matrix, q: Matrix, r: Matrix, n_players: usize) -> Result<Self> {
        let dx = a.nrows();
        let du = b.ncols();
        Self::new(
            a,
            Matrix::zeros(dx, dx),
            b,
            Matrix::zeros(dx, du),
            q,
            Matrix::zeros(dx, dx),
            r,
            Matrix::zeros(du, du),
            n_players,
        )
    }

    pub fn dx(&self) -> usize {
        self.a.nrows()
    }

    pub fn du(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_players(&self, n_players: usize) -> Result<Self> {
        if n_players == 0 {
            return Err(Error::InvalidInput("n_players must be at least 1".into()));
        }
        Ok(Self {
            n_players,
            ..self.clone()
        })
    }
}

/// Aggregate dynamics of the mean state: `𝒜 = A + Ā`, `ℬ = B + B̄`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldModel {
    pub a_cal: Matrix,
    pub b_cal: Matrix,
}

pub fn aggregate(model: &SystemModel) -> MeanFieldModel {
    MeanFieldModel {
        a_cal: &model.a + &model.a_bar,
        b_cal: &model.b + &model.b_bar,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Gaussian,
    Explicit,
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseFamily::Gaussian => f.write_str("gaussian"),
            NoiseFamily::Explicit => f.write_str("explicit"),
        }
    }
}

/// Moments of the local noise `w` shared by every player.
///
/// `m3 = 𝔼[e eᵀQ e]` and `m4 = 𝔼[(eᵀQe − Tr(M₂Q))²]` with `e = w − m1`;
/// both depend on the state weight `Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    pub m1: Vector,
    pub m2: Matrix,
    pub m3: Vector,
    pub m4: f64,
    pub family: NoiseFamily,
}

impl NoiseModel {
    /// Gaussian noise: odd central moments vanish and the quadratic form
    /// has variance `2·Tr((QM₂)²)`.
    pub fn gaussian(m1: Vector, m2: Matrix, q: &Matrix) -> Result<Self> {
        let d = ensure_square("M2", &m2)?;
        check_noise_shapes(d, &m1, q)?;
        ensure_finite("M2", &m2)?;
        let qm2 = q * &m2;
        let m4 = 2.0 * (&qm2 * &qm2).trace();
        Ok(Self {
            m1,
            m2,
            m3: Vector::zeros(d),
            m4,
            family: NoiseFamily::Gaussian,
        })
    }

    pub fn explicit(m1: Vector, m2: Matrix, m3: Vector, m4: f64) -> Result<Self> {
        let d = ensure_square("M2", &m2)?;
        if m1.len() != d || m3.len() != d {
            return Err(Error::BadShape(format!("noise moments must have dimension {d}")));
        }
        ensure_finite("M2", &m2)?;
        if !m1.iter().chain(m3.iter()).all(|v| v.is_finite()) || !m4.is_finite() {
            return Err(Error::NonFiniteInput("noise moments".into()));
        }
        Ok(Self {
            m1,
            m2,
            m3,
            m4,
            family: NoiseFamily::Explicit,
        })
    }

    /// Zero-mean Gaussian noise with covariance `m2`.
    pub fn centered_gaussian(m2: Matrix, q: &Matrix) -> Result<Self> {
        let d = m2.nrows();
        Self::gaussian(Vector::zeros(d), m2, q)
    }

    /// Recomputes the `Q`-dependent moments after a change of state weight.
    /// Explicit moments are returned unchanged.
    pub fn with_state_weight(&self, q: &Matrix) -> Result<Self> {
        match self.family {
            NoiseFamily::Gaussian => Self::gaussian(self.m1.clone(), self.m2.clone(), q),
            NoiseFamily::Explicit => Ok(self.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    /// `𝔼[eᵀQe] = Tr(QM₂)`.
    pub fn quadratic_mean(&self, q: &Matrix) -> f64 {
        (q * &self.m2).trace()
    }

    /// Constant part of the expected per-step risk that no policy can
    /// influence: `M₄ − 4·Tr((QM₂)²)`.
    ///
    /// The long-run average of the squared one-step deviation equals the
    /// state-dependent constraint cost plus this constant.
    pub fn risk_offset(&self, q: &Matrix) -> f64 {
        let qm2 = q * &self.m2;
        self.m4 - 4.0 * (&qm2 * &qm2).trace()
    }
}

fn check_noise_shapes(d: usize, m1: &Vector, q: &Matrix) -> Result<()> {
    if m1.len() != d {
        return Err(Error::BadShape(format!("m1 must have length {d}, got {}", m1.len())));
    }
    ensure_shape("Q", q, d, d)?;
    if !m1.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("m1".into()));
    }
    Ok(())
}

/// Moments of the split noise `w̃ = w − w̄` and `w̄ = (1/n)Σ w`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedNoiseMoments {
    pub m1_tilde: Vector,
    pub m2_tilde: Matrix,
    pub m1_bar: Vector,
    pub m2_bar: Matrix,
}

pub fn transformed_noise(noise: &NoiseModel, n: usize) -> Result<TransformedNoiseMoments> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let inv_n = 1.0 / n as f64;
    Ok(TransformedNoiseMoments {
        m1_tilde: Vector::zeros(noise.dim()),
        m2_tilde: &noise.m2 * (1.0 - inv_n),
        m1_bar: noise.m1.clone(),
        m2_bar: &noise.m2 * inv_n,
    })
}

/// How the risk budget is specified: a raw tolerance `Γ` on the per-step
/// risk, or the state-dependent budget `Λ` directly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum RiskConfig {
    Gamma(f64),
    Lambda(f64),
}

/// Budget `Λ` for the state-dependent constraint cost.
///
/// In gamma mode `Λ = Γ − M₄ + 4·Tr((M₂Q)²)`, i.e. `Γ` minus the
/// policy-independent part of the expected risk.
pub fn risk_budget(cfg: &RiskConfig, noise: &NoiseModel, q: &Matrix) -> Result<f64> {
    let budget = match *cfg {
        RiskConfig::Gamma(gamma) => {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "risk tolerance must be positive, got {gamma}"
                )));
            }
            gamma - noise.risk_offset(q)
        }
        RiskConfig::Lambda(budget) => budget,
    };
    if !(budget > 0.0) {
        return Err(Error::InfeasibleBudget { budget });
    }
    Ok(budget)
}

/// Weights of the decomposed Lagrangian for a fixed multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianWeights {
    pub q_lambda: Matrix,
    pub q_bar_lambda: Matrix,
    pub q_c: Matrix,
    pub q_bar_c: Matrix,
}

impl LagrangianWeights {
    /// `n·Q_λ = Q + λ·4QM₂Q`, the per-player state weight once the `1/n`
    /// scaling is removed. Computed directly so it does not depend on `n`.
    pub fn normalized_tilde_weight(model: &SystemModel, noise: &NoiseModel, lambda: f64) -> Matrix {
        &model.q + risk_weight(model, noise) * lambda
    }
}

/// `4QM₂Q`.
pub fn risk_weight(model: &SystemModel, noise: &NoiseModel) -> Matrix {
    let q = &model.q;
    crate::linalg::symmetrize(&(q * &noise.m2 * q * 4.0))
}

pub fn lagrangian_weights(model: &SystemModel, noise: &NoiseModel, lambda: f64) -> Result<LagrangianWeights> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "multiplier must be nonnegative, got {lambda}"
        )));
    }
    if noise.dim() != model.dx() {
        return Err(Error::BadShape("noise dimension must match the state dimension".into()));
    }
    let n = model.n_players as f64;
    let q_bar_c = risk_weight(model, noise);
    let q_c = &q_bar_c / n;
    Ok(LagrangianWeights {
        q_lambda: &model.q / n + &q_c * lambda,
        q_bar_lambda: &model.q + &model.q_bar + &q_bar_c * lambda,
        q_c,
        q_bar_c,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Stabilizability, detectability and weight definiteness.
    Structure,
    /// Identically distributed local noise.
    SharedNoise,
    /// Finite fourth moment.
    FourthMoment,
}

impl Assumption {
    pub fn number(self) -> u8 {
        match self {
            Assumption::Structure => 1,
            Assumption::SharedNoise => 2,
            Assumption::FourthMoment => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, assumption: Assumption, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(AssumptionCheck {
            assumption,
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "[{status}] Assumption {}: {}", c.assumption.number(), c.name)?;
            if c.detail.is_empty() {
                writeln!(f)?;
            } else {
                writeln!(f, " ({})", c.detail)?;
            }
        }
        Ok(())
    }
}

/// Checks the standing assumptions. Stabilizability of `(A, B)` and
/// detectability of `(A, Q^½)` are certified by solving the Riccati
/// equation; the same is done for the aggregate pair.
pub fn validate(model: &SystemModel, noise: &NoiseModel) -> Result<ValidationReport> {
    if noise.dim() != model.dx() {
        return Err(Error::BadShape(format!(
            "noise dimension {} does not match state dimension {}",
            noise.dim(),
            model.dx()
        )));
    }
    let mut report = ValidationReport::default();
    let psd = |m: &Matrix| is_positive_semidefinite(m);
    report.push(
        Assumption::Structure,
        "Q symmetric positive semi-definite",
        psd(&model.q),
        "",
    );
    report.push(
        Assumption::Structure,
        "Q_bar symmetric positive semi-definite",
        psd(&model.q_bar),
        "",
    );
    let r_pd = is_positive_definite(&model.r);
    report.push(Assumption::Structure, "R symmetric positive definite", r_pd, "");
    let r_cal = &model.r + &model.r_bar;
    let r_cal_pd = is_positive_definite(&r_cal);
    report.push(
        Assumption::Structure,
        "R + R_bar symmetric positive definite",
        r_cal_pd,
        "",
    );

    let opts = SolverOptions::default();
    if r_pd {
        let outcome = solve_dare(&model.a, &model.b, &model.q, &model.r, &opts);
        report.push(
            Assumption::Structure,
            "(A, B) stabilizable and (A, Q^1/2) detectable",
            outcome.is_ok(),
            outcome
                .err()
                .map(|e| e.to_string())
                .unwrap_or_else(|| "Riccati certificate found".into()),
        );
    } else {
        report.push(
            Assumption::Structure,
            "(A, B) stabilizable and (A, Q^1/2) detectable",
            false,
            "skipped: R not positive definite",
        );
    }
    if r_cal_pd {
        let agg = aggregate(model);
        let outcome = solve_dare(&agg.a_cal, &agg.b_cal, &(&model.q + &model.q_bar), &r_cal, &opts);
        report.push(
            Assumption::Structure,
            "(A + A_bar, B + B_bar) stabilizable",
            outcome.is_ok(),
            outcome
                .err()
                .map(|e| e.to_string())
                .unwrap_or_else(|| "Riccati certificate found".into()),
        );
    } else {
        report.push(
            Assumption::Structure,
            "(A + A_bar, B + B_bar) stabilizable",
            false,
            "skipped: R + R_bar not positive definite",
        );
    }

    report.push(
        Assumption::SharedNoise,
        "local noises identically distributed",
        true,
        "one noise model is shared by all players",
    );
    report.push(
        Assumption::SharedNoise,
        "noise covariance M2 symmetric positive semi-definite",
        psd(&noise.m2),
        "",
    );
    if noise.family == NoiseFamily::Gaussian {
        let regenerated = noise.with_state_weight(&model.q)?;
        let consistent =
            regenerated.m3 == noise.m3 && (regenerated.m4 - noise.m4).abs() <= 1e-12 * noise.m4.abs().max(1.0);
        report.push(
            Assumption::SharedNoise,
            "gaussian moments consistent with Q",
            consistent,
            format!("M4 = {}", noise.m4),
        );
    }
    report.push(
        Assumption::FourthMoment,
        "finite nonnegative fourth moment",
        noise.m4.is_finite() && noise.m4 >= 0.0,
        format!("M4 = {}", noise.m4),
    );
    report.push(
        Assumption::Structure,
        "at least one player",
        model.n_players >= 1,
        format!("n = {}", model.n_players),
    );
    Ok(report)
}
