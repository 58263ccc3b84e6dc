//! Closed-form evaluation of the risk constraint and of the average cost
//! under a stabilizing affine policy.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{solve_affine_fixed_point, solve_dlyap, spectral_radius, Matrix, SolverOptions, Vector};
use crate::model::{aggregate, risk_weight, transformed_noise, NoiseModel, SystemModel};
use crate::synthesis::AffinePolicy;

/// Lyapunov certificates of the constraint cost for the deviation and the
/// aggregate subsystems.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintCertificates {
    pub p_c_tilde: Matrix,
    pub p_c_bar: Matrix,
    pub g_c_tilde: Vector,
    pub g_c_bar: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskAssessment {
    pub certificates: ConstraintCertificates,
    pub j_c_tilde_per_player: f64,
    pub j_c_bar: f64,
    /// `J_c̄ + n·J̃_cⁱ`.
    pub j_c_total: f64,
    /// `J_c_total − Λ`.
    pub subgradient: f64,
}

fn stable_closed_loops(model: &SystemModel, policy: &AffinePolicy) -> Result<(Matrix, Matrix)> {
    if policy.dx() != model.dx() || policy.du() != model.du() {
        return Err(Error::BadShape("policy dimensions do not match the model".into()));
    }
    let (f, f_bar) = policy.closed_loops(model);
    for m in [&f, &f_bar] {
        let rho = spectral_radius(m)?;
        if rho >= 1.0 {
            return Err(Error::UnstableClosedLoop { spectral_radius: rho });
        }
    }
    Ok((f, f_bar))
}

pub fn constraint_certificates(
    model: &SystemModel,
    noise: &NoiseModel,
    policy: &AffinePolicy,
) -> Result<ConstraintCertificates> {
    if noise.dim() != model.dx() {
        return Err(Error::BadShape("noise dimension must match the state dimension".into()));
    }
    let opts = SolverOptions::default();
    let (f, f_bar) = stable_closed_loops(model, policy)?;
    let agg = aggregate(model);
    let split = transformed_noise(noise, model.n_players)?;
    let n = model.n_players as f64;
    let weight_bar = risk_weight(model, noise);
    let weight_tilde = &weight_bar / n;

    let p_c_tilde = solve_dlyap(&f, &weight_tilde, &opts)?;
    let p_c_bar = solve_dlyap(&f_bar, &weight_bar, &opts)?;

    // gᵀ = 2{cᵀP F}(I − F)⁻¹, with c the constant drive of each subsystem.
    let drive_tilde = &model.b * &policy.tau + &split.m1_tilde;
    let c_tilde = f.transpose() * (&p_c_tilde * &drive_tilde) * 2.0;
    let g_c_tilde = solve_affine_fixed_point(&f, &c_tilde)?;

    let drive_bar = &agg.b_cal * &policy.tau_bar + &noise.m1;
    let c_bar = (f_bar.transpose() * (&p_c_bar * &drive_bar) + (&model.q * &noise.m3) * 2.0) * 2.0;
    let g_c_bar = solve_affine_fixed_point(&f_bar, &c_bar)?;

    Ok(ConstraintCertificates {
        p_c_tilde,
        p_c_bar,
        g_c_tilde,
        g_c_bar,
    })
}

/// Long-run constraint cost `J̃_c = J_c̄ + Σᵢ J̃_cⁱ` under `policy`, with the
/// dual subgradient `J̃_c − Λ`.
///
/// The aggregate term includes `Tr(P_c̄·M₂/n)` for the averaged noise
/// `w̄`; it vanishes as `n → ∞`.
pub fn constraint_cost(
    model: &SystemModel,
    noise: &NoiseModel,
    policy: &AffinePolicy,
    budget: f64,
) -> Result<RiskAssessment> {
    let certificates = constraint_certificates(model, noise, policy)?;
    let agg = aggregate(model);
    let split = transformed_noise(noise, model.n_players)?;

    let drive_tilde = &model.b * &policy.tau + &split.m1_tilde;
    let j_c_tilde_per_player = (&certificates.p_c_tilde * (&split.m2_tilde + &drive_tilde * drive_tilde.transpose()))
        .trace()
        + certificates.g_c_tilde.dot(&drive_tilde);

    let drive_bar = &agg.b_cal * &policy.tau_bar + &noise.m1;
    let j_c_bar = (&certificates.p_c_bar * (&split.m2_bar + &drive_bar * drive_bar.transpose())).trace()
        + certificates.g_c_bar.dot(&drive_bar);

    let j_c_total = j_c_bar + model.n_players as f64 * j_c_tilde_per_player;
    Ok(RiskAssessment {
        certificates,
        j_c_tilde_per_player,
        j_c_bar,
        j_c_total,
        subgradient: j_c_total - budget,
    })
}

pub fn subgradient(assessment: &RiskAssessment, budget: f64) -> f64 {
    assessment.j_c_total - budget
}

/// Expected long-run average of the squared one-step deviation of the
/// state penalty, i.e. the raw risk each player experiences.
pub fn expected_risk(assessment: &RiskAssessment, model: &SystemModel, noise: &NoiseModel) -> f64 {
    assessment.j_c_total + noise.risk_offset(&model.q)
}

/// Breakdown of the long-run average stage cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AverageCost {
    /// Contribution of all deviation subsystems.
    pub tilde: f64,
    /// Contribution of the aggregate subsystem.
    pub bar: f64,
    pub total: f64,
}

/// Long-run average of the stage cost under `policy`.
///
/// Uses `c = Σᵢ (1/n)(x̃ᵀQx̃ + ũᵀRũ) + x̄ᵀ(Q+Q̄)x̄ + ūᵀ(R+R̄)ū`, which
/// holds because deviations sum to zero across players. Each subsystem
/// is an affine recursion `z' = Fz + c + noise`; its average quadratic
/// cost is `Tr(P·Cov) + z*ᵀWz* + vᵀz* + const` with `P = W + FᵀPF` and
/// `z*` the stationary mean.
pub fn average_cost(model: &SystemModel, noise: &NoiseModel, policy: &AffinePolicy) -> Result<AverageCost> {
    if noise.dim() != model.dx() {
        return Err(Error::BadShape("noise dimension must match the state dimension".into()));
    }
    let opts = SolverOptions::default();
    let (f, f_bar) = stable_closed_loops(model, policy)?;
    let agg = aggregate(model);
    let split = transformed_noise(noise, model.n_players)?;
    let dx = model.dx();
    let identity = Matrix::identity(dx, dx);

    // Deviation: ũ = −K x̃ (the offsets are common to all players).
    let w_tilde = &model.q + policy.k.transpose() * &model.r * &policy.k;
    let p_tilde = solve_dlyap(&f, &w_tilde, &opts)?;
    let tilde = (&p_tilde * &split.m2_tilde).trace();

    // Aggregate: ū = −K̄x̄ + τ + τ̄.
    let offset = &policy.tau + &policy.tau_bar;
    let r_cal = &model.r + &model.r_bar;
    let w_bar = &model.q + &model.q_bar + policy.k_bar.transpose() * &r_cal * &policy.k_bar;
    let p_bar = solve_dlyap(&f_bar, &w_bar, &opts)?;
    let drive = &agg.b_cal * &offset + &noise.m1;
    let mean = (&identity - &f_bar)
        .lu()
        .solve(&drive)
        .ok_or_else(|| Error::SingularSystem("I − F̄".into()))?;
    let linear = policy.k_bar.transpose() * (&r_cal * &offset) * -2.0;
    let bar = (&p_bar * &split.m2_bar).trace()
        + mean.dot(&(&w_bar * &mean))
        + linear.dot(&mean)
        + offset.dot(&(&r_cal * &offset));

    Ok(AverageCost {
        tilde,
        bar,
        total: tilde + bar,
    })
}
