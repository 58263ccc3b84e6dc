//! Reference computations that do not go through the library's solvers.
#![allow(dead_code)]

use mfrlqr::linalg::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Backward Riccati recursion over `horizon` steps from a zero terminal
/// cost; returns the first-stage gain.
pub fn finite_horizon_gain(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, horizon: usize) -> Matrix {
    let mut p = Matrix::zeros(a.nrows(), a.ncols());
    let mut k = Matrix::zeros(b.ncols(), a.nrows());
    for _ in 0..horizon {
        let s = r + b.transpose() * &p * b;
        k = s
            .clone()
            .lu()
            .solve(&(b.transpose() * &p * a))
            .expect("R + BᵀPB invertible");
        let f = a - b * &k;
        p = q + k.transpose() * r * &k + f.transpose() * &p * &f;
        p = (&p + p.transpose()) * 0.5;
    }
    k
}

/// Gain of the stacked `n`-player problem under the Lagrangian stage cost
/// `(1/n)Σ(xᵢᵀWxᵢ + uᵢᵀRuᵢ) + x̄ᵀQ̄x̄ + ūᵀR̄ū` with `W = Q + 4λQM₂Q`.
pub fn stacked_gain(
    (a, a_bar, b, b_bar): (&Matrix, &Matrix, &Matrix, &Matrix),
    (q, q_bar, r, r_bar): (&Matrix, &Matrix, &Matrix, &Matrix),
    m2: &Matrix,
    lambda: f64,
    n: usize,
    horizon: usize,
) -> Matrix {
    let (dx, du) = b.shape();
    let w = q + q * m2 * q * (4.0 * lambda);
    let inv_n = 1.0 / n as f64;
    let mut big_a = Matrix::zeros(n * dx, n * dx);
    let mut big_b = Matrix::zeros(n * dx, n * du);
    let mut big_q = Matrix::zeros(n * dx, n * dx);
    let mut big_r = Matrix::zeros(n * du, n * du);
    for i in 0..n {
        for j in 0..n {
            let mut blk_a = a_bar * inv_n;
            let mut blk_b = b_bar * inv_n;
            let mut blk_q = q_bar * (inv_n * inv_n);
            let mut blk_r = r_bar * (inv_n * inv_n);
            if i == j {
                blk_a += a;
                blk_b += b;
                blk_q += &w * inv_n;
                blk_r += r * inv_n;
            }
            big_a.view_mut((i * dx, j * dx), (dx, dx)).copy_from(&blk_a);
            big_b.view_mut((i * dx, j * du), (dx, du)).copy_from(&blk_b);
            big_q.view_mut((i * dx, j * dx), (dx, dx)).copy_from(&blk_q);
            big_r.view_mut((i * du, j * du), (du, du)).copy_from(&blk_r);
        }
    }
    finite_horizon_gain(&big_a, &big_b, &big_q, &big_r, horizon)
}

/// The stacked gain implied by `u = −K(x − x̄) − K̄x̄`.
pub fn expected_stacked_gain(k: &Matrix, k_bar: &Matrix, n: usize) -> Matrix {
    let (du, dx) = k.shape();
    let mut out = Matrix::zeros(n * du, n * dx);
    let shared = (k - k_bar) / n as f64;
    for i in 0..n {
        for j in 0..n {
            let mut blk = -&shared;
            if i == j {
                blk += k;
            }
            out.view_mut((i * du, j * dx), (du, dx)).copy_from(&blk);
        }
    }
    out
}

/// Scalar mean-field instance with Gaussian noise.
#[derive(Clone, Copy, Debug)]
pub struct Scalar {
    pub a: f64,
    pub a_bar: f64,
    pub b: f64,
    pub b_bar: f64,
    pub q: f64,
    pub q_bar: f64,
    pub r: f64,
    pub r_bar: f64,
    pub n: usize,
    pub m1: f64,
    pub m2: f64,
}

/// Closed-form quantities of the scalar problem at a fixed multiplier.
#[derive(Clone, Copy, Debug)]
pub struct ScalarSolution {
    pub k: f64,
    pub k_bar: f64,
    pub tau_bar: f64,
    pub j: f64,
    pub j_c: f64,
}

fn scalar_dare(a: f64, b: f64, q: f64, r: f64) -> f64 {
    // b²p² + (r(1 − a²) − qb²)p − qr = 0, positive root.
    let lin = r * (1.0 - a * a) - q * b * b;
    (-lin + (lin * lin + 4.0 * b * b * q * r).sqrt()) / (2.0 * b * b)
}

impl Scalar {
    pub fn solve(&self, lambda: f64) -> ScalarSolution {
        let risk = 4.0 * lambda * self.q * self.q * self.m2;
        let p = scalar_dare(self.a, self.b, self.q + risk, self.r);
        let k = self.a * self.b * p / (self.r + self.b * self.b * p);

        let (ac, bc) = (self.a + self.a_bar, self.b + self.b_bar);
        let (wb, rc) = (self.q + self.q_bar + risk, self.r + self.r_bar);
        let pb = scalar_dare(ac, bc, wb, rc);
        let k_bar = ac * bc * pb / (rc + bc * bc * pb);

        // The optimal stationary mean solves the static problem
        // min wb·x² + rc·u² subject to x = ac·x + bc·u + m1.
        let u_star = -wb * bc * self.m1 / (wb * bc * bc + rc * (1.0 - ac).powi(2));
        let x_star = (bc * u_star + self.m1) / (1.0 - ac);
        let tau_bar = u_star + k_bar * x_star;

        let mut out = ScalarSolution {
            k,
            k_bar,
            tau_bar,
            j: 0.0,
            j_c: 0.0,
        };
        let (j, j_c) = self.costs(k, k_bar, tau_bar);
        out.j = j;
        out.j_c = j_c;
        out
    }

    /// Stationary `(J, J_c)` of the policy `u = −k(x − x̄) − k̄x̄ + τ̄`.
    pub fn costs(&self, k: f64, k_bar: f64, tau_bar: f64) -> (f64, f64) {
        let n = self.n as f64;
        let f = self.a - self.b * k;
        let (ac, bc) = (self.a + self.a_bar, self.b + self.b_bar);
        let fb = ac - bc * k_bar;
        let v_tilde = self.m2 * (1.0 - 1.0 / n) / (1.0 - f * f);
        let v_bar = self.m2 / n / (1.0 - fb * fb);
        let mean = (bc * tau_bar + self.m1) / (1.0 - fb);
        let second_moment = v_tilde + v_bar + mean * mean;
        // State form 𝔼[4x·qM₂q·x]. The raw one-step risk averages to this
        // minus 4(qM₂)² plus M₄, since the predictable part of x_{t+1}
        // has second moment 𝔼[x²] − M₂.
        let j_c = 4.0 * self.q * self.q * self.m2 * second_moment;
        let u_bar_mean = tau_bar - k_bar * mean;
        let j = (self.q + self.r * k * k) * v_tilde
            + (self.q + self.q_bar) * (v_bar + mean * mean)
            + (self.r + self.r_bar) * (k_bar * k_bar * v_bar + u_bar_mean * u_bar_mean);
        (j, j_c)
    }
}

/// Smallest `λ` in `[0, hi]` with `J_c(λ) ≤ budget`, by bisection on the
/// sign of the dual derivative `J_c(λ) − Λ`.
pub fn bisect_multiplier(j_c: impl Fn(f64) -> f64, budget: f64, hi: f64, steps: usize) -> f64 {
    if j_c(0.0) <= budget {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, hi);
    assert!(j_c(hi) <= budget, "bracket does not contain the multiplier");
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if j_c(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random `(A, B, Q, R)` with generic `B` (hence controllable) and
/// positive definite weights.
pub fn random_lqr(rng: &mut impl Rng, dx: usize, du: usize) -> (Matrix, Matrix, Matrix, Matrix) {
    let a = gaussian_matrix(rng, dx, dx, 1.0 / (dx as f64).sqrt());
    let b = gaussian_matrix(rng, dx, du, 1.0);
    let g = gaussian_matrix(rng, dx, dx, 1.0);
    let h = gaussian_matrix(rng, du, du, 1.0);
    let q = &g * g.transpose() * 0.5 + Matrix::identity(dx, dx) * 0.1;
    let r = &h * h.transpose() * 0.1 + Matrix::identity(du, du);
    (a, b, q, r)
}

pub fn max_abs_diff(x: &Matrix, y: &Matrix) -> f64 {
    (x - y).amax()
}
