//! Dense matrix kernels: discrete Riccati and Lyapunov solvers, affine
//! fixed points, spectral radius and continuous-to-discrete conversion.
//!
//! All solvers certify their output by a normwise backward error: a
//! Lyapunov solution is accepted when
//! `‖residual‖_F ≤ tolerance · max(1, ‖W‖_F + (1 + ‖F‖_F²)·‖P‖_F)`,
//! and a Riccati solution likewise with `Q` and `A`. Scaling by `‖P‖`
//! alone is too strict for large closed-loop gains, where rounding in
//! `FᵀPF` is of order `ε·‖F‖²·‖P‖`.

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Values above this norm during value iteration are treated as divergence.
const DIVERGENCE_NORM: f64 = 1e150;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl SolverOptions {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self> {
        let opts = Self {
            tolerance,
            max_iterations,
        };
        opts.check()?;
        Ok(opts)
    }

    fn check(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "solver tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn ensure_finite(name: &str, m: &Matrix) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(name.to_string()))
    }
}

pub(crate) fn ensure_square(name: &str, m: &Matrix) -> Result<usize> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::BadShape(format!(
            "{name} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub(crate) fn ensure_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::BadShape(format!(
            "{name} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// True when `m` is symmetric up to a relative tolerance.
pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).norm() <= tol * m.norm().max(1.0)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Matrix) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn is_positive_semidefinite(m: &Matrix) -> bool {
    is_symmetric(m, 1e-10) && min_symmetric_eigenvalue(m) >= -1e-10 * m.norm().max(1.0)
}

pub fn is_positive_definite(m: &Matrix) -> bool {
    is_symmetric(m, 1e-10) && symmetrize(m).cholesky().is_some() && min_symmetric_eigenvalue(m) > 0.0
}

/// Largest eigenvalue modulus of a square matrix.
///
/// Scalars and 2×2 blocks are handled analytically; larger matrices use a
/// real Schur decomposition, falling back to the Gelfand limit
/// `‖M^(2^k)‖^(1/2^k)` if the QR sweep fails to converge.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    let d = ensure_square("M", m)?;
    ensure_finite("M", m)?;
    match d {
        1 => Ok(m[(0, 0)].abs()),
        2 => {
            let half_trace = 0.5 * (m[(0, 0)] + m[(1, 1)]);
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let disc = half_trace * half_trace - det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                Ok((half_trace + s).abs().max((half_trace - s).abs()))
            } else {
                Ok(det.sqrt())
            }
        }
        _ => match Schur::try_new(m.clone(), f64::EPSILON, 100 * d * d) {
            Some(schur) => Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)),
            None => Ok(gelfand_radius(m)),
        },
    }
}

fn gelfand_radius(m: &Matrix) -> f64 {
    // Track log-scale separately so repeated squaring never overflows.
    let mut power = m.clone();
    let mut log_scale = 0.0;
    let mut estimate = power.norm();
    for k in 1..=60 {
        let norm = power.norm();
        if norm == 0.0 {
            return 0.0;
        }
        power /= norm;
        log_scale = 2.0 * (log_scale + norm.ln());
        power = &power * &power;
        let exponent = 2f64.powi(k);
        let next = ((log_scale + power.norm().ln()) / exponent).exp();
        if (next - estimate).abs() <= 1e-12 * next.max(1e-300) {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Optimal feedback gain `(R + BᵀPB)⁻¹ BᵀPA` for a Riccati certificate `P`.
pub fn dare_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let bt_p = b.transpose() * p;
    let s = symmetrize(&(r + &bt_p * b));
    let rhs = bt_p * a;
    match s.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => s
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularSystem("R + BᵀPB".into())),
    }
}

fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let k = dare_gain(a, b, r, p)?;
    let pa = p * a;
    let next = q + a.transpose() * &pa - (a.transpose() * p * b) * k;
    Ok(symmetrize(&next))
}

/// `P − Q − AᵀPA + AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    Ok(p - riccati_map(a, b, q, r, p)?)
}

/// `P − W − FᵀPF`.
pub fn dlyap_residual(f: &Matrix, w: &Matrix, p: &Matrix) -> Matrix {
    p - w - f.transpose() * p * f
}

fn relative_scale(p: &Matrix) -> f64 {
    p.norm().max(1.0)
}

fn backward_scale(f: &Matrix, w: &Matrix, p: &Matrix) -> f64 {
    (w.norm() + (1.0 + f.norm_squared()) * p.norm()).max(1.0)
}

/// Stabilizing solution of `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
///
/// Runs value iteration from `P = 0` and switches to Newton–Kleinman as
/// soon as the value-iteration gain stabilizes the pair and progress has
/// slowed. The returned `P` is certified by residual and by the spectral
/// radius of `A − B·K(P)`.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    opts.check()?;
    let d = ensure_square("A", a)?;
    let m = b.ncols();
    ensure_shape("B", b, d, m)?;
    ensure_shape("Q", q, d, d)?;
    ensure_shape("R", r, m, m)?;
    if m == 0 {
        return Err(Error::BadShape("B must have at least one column".into()));
    }
    for (name, mat) in [("A", a), ("B", b), ("Q", q), ("R", r)] {
        ensure_finite(name, mat)?;
    }
    if !is_positive_definite(r) {
        return Err(Error::NotPositiveDefinite { what: "R".into() });
    }

    let mut p = Matrix::zeros(d, d);
    let mut prev_delta = f64::INFINITY;
    let mut last_residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let next = riccati_map(a, b, q, r, &p)?;
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::NotStabilizable {
                spectral_radius: spectral_radius(a).unwrap_or(f64::INFINITY),
            });
        }
        let delta = (&next - &p).norm();
        p = next;
        last_residual = delta;
        if delta <= opts.tolerance * backward_scale(a, q, &p) * 1e-2 {
            return certify_dare(a, b, q, r, p, opts);
        }
        let stalled = it >= 8 && delta > 0.5 * prev_delta;
        if stalled || it % 64 == 0 {
            // With large gains the Newton step can be less accurate than
            // the value-iteration iterate it started from, so either one
            // may be the one that certifies.
            if let Some(solution) = newton_kleinman(a, b, q, r, &p, opts)? {
                if let Ok(solution) = certify_dare(a, b, q, r, solution, opts) {
                    return Ok(solution);
                }
            }
            if let Ok(solution) = certify_dare(a, b, q, r, p.clone(), opts) {
                return Ok(solution);
            }
        }
        prev_delta = delta;
    }
    Err(Error::NonConvergent {
        solver: "dare",
        iterations: opts.max_iterations,
        residual: last_residual,
    })
}

/// Newton–Kleinman refinement from the gain of `p_start`. Returns `None`
/// when that gain is not yet stabilizing.
fn newton_kleinman(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    p_start: &Matrix,
    opts: &SolverOptions,
) -> Result<Option<Matrix>> {
    let mut k = dare_gain(a, b, r, p_start)?;
    let mut closed = a - b * &k;
    if spectral_radius(&closed)? >= 1.0 {
        return Ok(None);
    }
    let mut p = p_start.clone();
    let mut prev_delta = f64::INFINITY;
    for it in 0..100 {
        let w = symmetrize(&(q + k.transpose() * r * &k));
        let next = match solve_dlyap(&closed, &w, opts) {
            Ok(next) => next,
            Err(Error::UnstableClosedLoop { .. }) | Err(Error::NonConvergent { .. }) => return Ok(None),
            Err(e) => return Err(e),
        };
        let delta = (&next - &p).norm();
        p = next;
        k = dare_gain(a, b, r, &p)?;
        closed = a - b * &k;
        // Past the first few steps a non-decreasing update means rounding
        // noise has been reached.
        if delta <= 1e-3 * opts.tolerance * backward_scale(a, q, &p) || (it >= 4 && delta >= prev_delta) {
            break;
        }
        prev_delta = delta;
    }
    Ok(Some(p))
}

fn certify_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: Matrix, opts: &SolverOptions) -> Result<Matrix> {
    let residual = dare_residual(a, b, q, r, &p)?.norm();
    let k = dare_gain(a, b, r, &p)?;
    let rho = spectral_radius(&(a - b * k))?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizable { spectral_radius: rho });
    }
    if residual > opts.tolerance * backward_scale(a, q, &p) {
        return Err(Error::NonConvergent {
            solver: "dare",
            iterations: opts.max_iterations,
            residual,
        });
    }
    Ok(p)
}

/// Solution of the discrete Lyapunov equation `P = W + FᵀPF` by doubling:
/// `P ← P + FₖᵀPFₖ`, `Fₖ₊₁ = Fₖ²`.
pub fn solve_dlyap(f: &Matrix, w: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    opts.check()?;
    let d = ensure_square("F", f)?;
    ensure_shape("W", w, d, d)?;
    ensure_finite("F", f)?;
    ensure_finite("W", w)?;
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop { spectral_radius: rho });
    }

    let mut p = symmetrize(w);
    let mut fk = f.clone();
    let limit = opts.max_iterations.min(200);
    for _ in 0..limit {
        let increment = fk.transpose() * &p * &fk;
        p = symmetrize(&(&p + &increment));
        fk = &fk * &fk;
        if increment.norm() <= f64::EPSILON * relative_scale(&p) || fk.norm() == 0.0 {
            break;
        }
    }
    let residual = dlyap_residual(f, w, &p).norm();
    if !residual.is_finite() || residual > opts.tolerance * backward_scale(f, w, &p) {
        return Err(Error::NonConvergent {
            solver: "dlyap",
            iterations: limit,
            residual,
        });
    }
    Ok(p)
}

/// Solves `gᵀ = cᵀ + gᵀF`, i.e. `(I − Fᵀ) g = c`, for a stable `F`.
pub fn solve_affine_fixed_point(f: &Matrix, c: &Vector) -> Result<Vector> {
    let d = ensure_square("F", f)?;
    if c.len() != d {
        return Err(Error::BadShape(format!("c must have length {d}, got {}", c.len())));
    }
    ensure_finite("F", f)?;
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("c".into()));
    }
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop { spectral_radius: rho });
    }
    let system = Matrix::identity(d, d) - f.transpose();
    system
        .lu()
        .solve(c)
        .ok_or_else(|| Error::SingularSystem("I − Fᵀ".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    Euler,
    Exact,
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "exact" => Ok(Self::Exact),
            other => Err(Error::InvalidInput(format!("unknown discretization '{other}'"))),
        }
    }
}

/// Discrete-time mean-field dynamics `(A, Ā, B, B̄)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDynamics {
    pub a: Matrix,
    pub a_bar: Matrix,
    pub b: Matrix,
    pub b_bar: Matrix,
}

/// Converts continuous-time mean-field dynamics to discrete time.
///
/// `Exact` applies a zero-order hold separately to the per-player pair
/// `(Ac, Bc)` and the aggregate pair `(Ac + Āc, Bc + B̄c)`; the coupling
/// terms are the differences, so both decoupled subsystems are exact.
pub fn discretize(
    ac: &Matrix,
    a_bar_c: &Matrix,
    bc: &Matrix,
    b_bar_c: &Matrix,
    dt: f64,
    method: Discretization,
) -> Result<DiscreteDynamics> {
    let d = ensure_square("Ac", ac)?;
    let m = bc.ncols();
    ensure_shape("Ā", a_bar_c, d, d)?;
    ensure_shape("Bc", bc, d, m)?;
    ensure_shape("B̄c", b_bar_c, d, m)?;
    for (name, mat) in [("Ac", ac), ("Āc", a_bar_c), ("Bc", bc), ("B̄c", b_bar_c)] {
        ensure_finite(name, mat)?;
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    match method {
        Discretization::Euler => Ok(DiscreteDynamics {
            a: Matrix::identity(d, d) + ac * dt,
            a_bar: a_bar_c * dt,
            b: bc * dt,
            b_bar: b_bar_c * dt,
        }),
        Discretization::Exact => {
            let (a, b) = zero_order_hold(ac, bc, dt);
            let (a_cal, b_cal) = zero_order_hold(&(ac + a_bar_c), &(bc + b_bar_c), dt);
            Ok(DiscreteDynamics {
                a_bar: a_cal - &a,
                b_bar: b_cal - &b,
                a,
                b,
            })
        }
    }
}

fn zero_order_hold(ac: &Matrix, bc: &Matrix, dt: f64) -> (Matrix, Matrix) {
    let d = ac.nrows();
    let m = bc.ncols();
    let mut augmented = Matrix::zeros(d + m, d + m);
    augmented.view_mut((0, 0), (d, d)).copy_from(&(ac * dt));
    augmented.view_mut((0, d), (d, m)).copy_from(&(bc * dt));
    let phi = augmented.exp();
    (
        phi.view((0, 0), (d, d)).into_owned(),
        phi.view((0, d), (d, m)).into_owned(),
    )
}
