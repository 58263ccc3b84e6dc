//! Affine policy synthesis for a fixed Lagrange multiplier.
//!
//! The Lagrangian splits into a per-player deviation problem on
//! `x̃ = x − x̄` and an aggregate problem on `x̄`. Each is a standard
//! Riccati problem of the state dimension, so the cost of synthesis does
//! not grow with the number of players.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dare_gain, solve_affine_fixed_point, solve_dare, Matrix, SolverOptions, Vector};
use crate::model::{aggregate, lagrangian_weights, transformed_noise, LagrangianWeights, NoiseModel, SystemModel};

/// The control law `u = −K(x − x̄) − K̄x̄ + τ + τ̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    #[serde(rename = "K", with = "crate::serde_helpers::matrix")]
    pub k: Matrix,
    #[serde(rename = "K_bar", with = "crate::serde_helpers::matrix")]
    pub k_bar: Matrix,
    #[serde(with = "crate::serde_helpers::vector")]
    pub tau: Vector,
    #[serde(with = "crate::serde_helpers::vector")]
    pub tau_bar: Vector,
}

impl AffinePolicy {
    pub fn new(k: Matrix, k_bar: Matrix, tau: Vector, tau_bar: Vector) -> Result<Self> {
        let (du, dx) = k.shape();
        if k_bar.shape() != (du, dx) || tau.len() != du || tau_bar.len() != du {
            return Err(Error::BadShape(format!(
                "policy components must be {du}x{dx} gains and length-{du} offsets"
            )));
        }
        Ok(Self { k, k_bar, tau, tau_bar })
    }

    pub fn dx(&self) -> usize {
        self.k.ncols()
    }

    pub fn du(&self) -> usize {
        self.k.nrows()
    }

    pub fn control(&self, x_i: &Vector, x_bar: &Vector) -> Result<Vector> {
        if x_i.len() != self.dx() || x_bar.len() != self.dx() {
            return Err(Error::BadShape(format!("states must have length {}", self.dx())));
        }
        Ok(-(&self.k * (x_i - x_bar)) - &self.k_bar * x_bar + &self.tau + &self.tau_bar)
    }

    /// Closed-loop matrices `(A − BK, 𝒜 − ℬK̄)`.
    pub fn closed_loops(&self, model: &SystemModel) -> (Matrix, Matrix) {
        let agg = aggregate(model);
        (&model.a - &model.b * &self.k, agg.a_cal - agg.b_cal * &self.k_bar)
    }
}

/// Synthesized controller together with the certificates it was derived from.
///
/// `p` is the deviation-system Riccati solution for the weights
/// `(n·Q_λ, R)`, i.e. the per-player problem with the common `1/n`
/// factor removed. `p_cal` solves the aggregate Riccati equation with
/// `(Q_λ̄, R + R̄)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGains {
    pub policy: AffinePolicy,
    pub p: Matrix,
    pub p_cal: Matrix,
    pub g: Vector,
    pub g_bold: Vector,
    pub lambda: f64,
}

pub fn synthesize(model: &SystemModel, noise: &NoiseModel, lambda: f64) -> Result<PolicyGains> {
    synthesize_with(model, noise, lambda, &SolverOptions::default())
}

pub fn synthesize_with(
    model: &SystemModel,
    noise: &NoiseModel,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<PolicyGains> {
    let weights: LagrangianWeights = lagrangian_weights(model, noise, lambda)?;
    let agg = aggregate(model);
    let split = transformed_noise(noise, model.n_players)?;

    // Deviation subsystem.
    let q_tilde = LagrangianWeights::normalized_tilde_weight(model, noise, lambda);
    let p = solve_dare(&model.a, &model.b, &q_tilde, &model.r, opts)?;
    let k = dare_gain(&model.a, &model.b, &model.r, &p)?;
    let closed = &model.a - &model.b * &k;
    let forcing = closed.transpose() * (&p * &split.m1_tilde * 2.0);
    let g = solve_affine_fixed_point(&closed, &forcing)?;
    let tau = affine_offset(&model.b, &model.r, &p, &split.m1_tilde, &g)?;

    // Aggregate subsystem.
    let r_cal = &model.r + &model.r_bar;
    let p_cal = solve_dare(&agg.a_cal, &agg.b_cal, &weights.q_bar_lambda, &r_cal, opts)?;
    let k_bar = dare_gain(&agg.a_cal, &agg.b_cal, &r_cal, &p_cal)?;
    let closed_bar = &agg.a_cal - &agg.b_cal * &k_bar;
    let forcing_bar = closed_bar.transpose() * (&p_cal * &noise.m1 * 2.0) + (&model.q * &noise.m3) * (4.0 * lambda);
    let g_bold = solve_affine_fixed_point(&closed_bar, &forcing_bar)?;
    let tau_bar = affine_offset(&agg.b_cal, &r_cal, &p_cal, &noise.m1, &g_bold)?;

    Ok(PolicyGains {
        policy: AffinePolicy { k, k_bar, tau, tau_bar },
        p,
        p_cal,
        g,
        g_bold,
        lambda,
    })
}

/// `−½(R + BᵀPB)⁻¹Bᵀ(2P·mean + g)`.
fn affine_offset(b: &Matrix, r: &Matrix, p: &Matrix, mean: &Vector, g: &Vector) -> Result<Vector> {
    let s = r + b.transpose() * p * b;
    let rhs = b.transpose() * (p * mean * 2.0 + g) * -0.5;
    s.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("R + BᵀPB".into()))
}

/// The classical controller, i.e. synthesis with a zero multiplier.
pub fn risk_neutral(model: &SystemModel, noise: &NoiseModel) -> Result<PolicyGains> {
    synthesize(model, noise, 0.0)
}
