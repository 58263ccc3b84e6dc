//! n-player Monte Carlo rollouts of the mean-field system under an affine
//! policy, with empirical cost and risk estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, symmetrize, Matrix, Vector};
use crate::model::{NoiseFamily, NoiseModel, SystemModel};
use crate::synthesis::AffinePolicy;

/// States with any coordinate beyond this magnitude abort the rollout.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

pub type NoiseRng = ChaCha8Rng;

/// Source of local noise draws. Each draw includes the noise mean.
pub trait NoiseSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut NoiseRng, out: &mut [f64]);
}

/// `w = m1 + L z` with `LLᵀ = M₂` and `z` standard normal.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: Vector,
    factor: Matrix,
}

impl GaussianSampler {
    pub fn new(noise: &NoiseModel) -> Result<Self> {
        if noise.family != NoiseFamily::Gaussian {
            return Err(Error::UnsupportedFamily(noise.family.to_string()));
        }
        Self::from_moments(noise.m1.clone(), &noise.m2)
    }

    pub fn from_moments(mean: Vector, cov: &Matrix) -> Result<Self> {
        ensure_shape("covariance", cov, mean.len(), mean.len())?;
        Ok(Self {
            mean,
            factor: psd_factor(cov),
        })
    }
}

/// Square-root factor of a symmetric PSD matrix; negative eigenvalues
/// from rounding are clipped to zero.
fn psd_factor(cov: &Matrix) -> Matrix {
    if cov.iter().all(|v| *v == 0.0) {
        return Matrix::zeros(cov.nrows(), cov.ncols());
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots)
}

impl NoiseSampler for GaussianSampler {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut NoiseRng, out: &mut [f64]) {
        let d = self.mean.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for (r, slot) in out.iter_mut().enumerate().take(d) {
            let mut acc = self.mean[r];
            for (c, zc) in z.iter().enumerate() {
                acc += self.factor[(r, c)] * zc;
            }
            *slot = acc;
        }
    }
}

/// Independent stream for one player, derived from the master seed so
/// that adding players leaves the other players' draws unchanged.
pub fn player_rng(seed: u64, player: usize) -> NoiseRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(player as u64);
    rng
}

/// `count` reproducible draws from the Gaussian noise model.
pub fn sample_noise(noise: &NoiseModel, count: usize, seed: u64) -> Result<Vec<Vector>> {
    let sampler = GaussianSampler::new(noise)?;
    let mut rng = player_rng(seed, 0);
    let mut buf = vec![0.0; sampler.dim()];
    Ok((0..count)
        .map(|_| {
            sampler.sample(&mut rng, &mut buf);
            Vector::from_column_slice(&buf)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialState {
    Zero,
    Gaussian(#[serde(with = "crate::serde_helpers::matrix")] Matrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlayerSelector {
    Index(usize),
    #[serde(with = "all_players")]
    All,
}

mod all_players {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("all")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "all" {
            Ok(())
        } else {
            Err(D::Error::custom(format!(
                "expected \"all\" or a player index, got \"{s}\""
            )))
        }
    }
}

impl PlayerSelector {
    fn includes(self, player: usize) -> bool {
        match self {
            PlayerSelector::All => true,
            PlayerSelector::Index(i) => i == player,
        }
    }
}

/// Additive state impulse applied during the transition out of step `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time: usize,
    pub player: PlayerSelector,
    #[serde(with = "crate::serde_helpers::vector")]
    pub impulse: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutConfig {
    pub n_players: usize,
    pub horizon: usize,
    pub seed: u64,
    pub initial_state: InitialState,
    pub disturbances: Vec<Disturbance>,
}

impl RolloutConfig {
    pub fn new(n_players: usize, horizon: usize, seed: u64) -> Self {
        Self {
            n_players,
            horizon,
            seed,
            initial_state: InitialState::Zero,
            disturbances: Vec::new(),
        }
    }

    fn check(&self, dx: usize) -> Result<()> {
        if self.n_players == 0 {
            return Err(Error::InvalidInput("rollout needs at least one player".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if let InitialState::Gaussian(cov) = &self.initial_state {
            ensure_shape("initial covariance", cov, dx, dx)?;
        }
        for d in &self.disturbances {
            if d.time >= self.horizon {
                return Err(Error::InvalidInput(format!(
                    "disturbance at step {} is outside the horizon {}",
                    d.time, self.horizon
                )));
            }
            if d.impulse.len() != dx {
                return Err(Error::BadShape(format!("disturbance impulse must have length {dx}")));
            }
            if let PlayerSelector::Index(i) = d.player {
                if i >= self.n_players {
                    return Err(Error::InvalidInput(format!(
                        "disturbance targets player {i} of {}",
                        self.n_players
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Flat storage of one rollout.
///
/// `per_step_risk[t][i]` is the squared deviation of `x_{t+1}ᵀQx_{t+1}`
/// from its conditional mean given the state and controls at step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub n_players: usize,
    pub dx: usize,
    pub du: usize,
    pub horizon: usize,
    states: Vec<f64>,
    controls: Vec<f64>,
    mean_states: Vec<f64>,
    pub per_step_cost: Vec<f64>,
    per_step_risk: Vec<f64>,
    /// Policy-independent part of the expected risk, `M₄ − 4·Tr((QM₂)²)`.
    pub risk_offset: f64,
}

impl Trajectory {
    pub fn state(&self, t: usize, player: usize) -> &[f64] {
        let start = (t * self.n_players + player) * self.dx;
        &self.states[start..start + self.dx]
    }

    pub fn control(&self, t: usize, player: usize) -> &[f64] {
        let start = (t * self.n_players + player) * self.du;
        &self.controls[start..start + self.du]
    }

    pub fn mean_state(&self, t: usize) -> &[f64] {
        &self.mean_states[t * self.dx..(t + 1) * self.dx]
    }

    pub fn risk(&self, t: usize, player: usize) -> f64 {
        self.per_step_risk[t * self.n_players + player]
    }

    pub fn risks_at(&self, t: usize) -> &[f64] {
        &self.per_step_risk[t * self.n_players..(t + 1) * self.n_players]
    }

    /// Largest `|x_k|` per state coordinate over all steps and players.
    pub fn peak_state_deviation(&self) -> Vec<f64> {
        let mut peak = vec![0.0f64; self.dx];
        for chunk in self.states.chunks(self.dx) {
            for (p, v) in peak.iter_mut().zip(chunk) {
                *p = p.max(v.abs());
            }
        }
        peak
    }
}

fn mat_vec_add(m: &Matrix, x: &[f64], out: &mut [f64]) {
    for (r, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, xc) in x.iter().enumerate() {
            acc += m[(r, c)] * xc;
        }
        *slot += acc;
    }
}

fn quad(m: &Matrix, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (r, xr) in x.iter().enumerate() {
        for (c, xc) in x.iter().enumerate() {
            acc += xr * m[(r, c)] * xc;
        }
    }
    acc
}

/// Rollout with Gaussian noise drawn from `noise`.
pub fn rollout(
    model: &SystemModel,
    noise: &NoiseModel,
    policy: &AffinePolicy,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    let sampler = GaussianSampler::new(noise)?;
    rollout_with(model, noise, &sampler, policy, cfg)
}

/// Rollout with an arbitrary sampler. `noise` supplies the moments used
/// for the conditional mean of the state penalty; the sampler must match
/// them for the risk values to be meaningful.
pub fn rollout_with(
    model: &SystemModel,
    noise: &NoiseModel,
    sampler: &dyn NoiseSampler,
    policy: &AffinePolicy,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    let dx = model.dx();
    let du = model.du();
    if policy.dx() != dx || policy.du() != du {
        return Err(Error::BadShape("policy dimensions do not match the model".into()));
    }
    if noise.dim() != dx || sampler.dim() != dx {
        return Err(Error::BadShape("noise dimension must match the state dimension".into()));
    }
    cfg.check(dx)?;
    let n = cfg.n_players;
    let horizon = cfg.horizon;
    let inv_n = 1.0 / n as f64;

    let mut rngs: Vec<NoiseRng> = (0..n).map(|i| player_rng(cfg.seed, i)).collect();
    let mut states = vec![0.0; (horizon + 1) * n * dx];
    let mut controls = vec![0.0; horizon * n * du];
    let mut mean_states = vec![0.0; (horizon + 1) * dx];
    let mut per_step_cost = vec![0.0; horizon];
    let mut per_step_risk = vec![0.0; horizon * n];

    if let InitialState::Gaussian(cov) = &cfg.initial_state {
        let init = GaussianSampler::from_moments(Vector::zeros(dx), cov)?;
        for (i, rng) in rngs.iter_mut().enumerate() {
            init.sample(rng, &mut states[i * dx..(i + 1) * dx]);
        }
    }

    let common_offset = &policy.tau + &policy.tau_bar;
    let noise_quad_mean = noise.quadratic_mean(&model.q);
    let mut x_bar = vec![0.0; dx];
    let mut u_bar = vec![0.0; du];
    let mut u_common = vec![0.0; du];
    let mut deviation = vec![0.0; dx];
    let mut drift = vec![0.0; dx];
    let mut mu = vec![0.0; dx];
    let mut draw = vec![0.0; dx];
    let neg_k = -&policy.k;
    let neg_k_bar = -&policy.k_bar;

    for t in 0..=horizon {
        let (done, rest) = states.split_at_mut((t + 1) * n * dx);
        let current = &done[t * n * dx..];

        x_bar.iter_mut().for_each(|v| *v = 0.0);
        for x in current.chunks(dx) {
            for (m, v) in x_bar.iter_mut().zip(x) {
                *m += v;
            }
        }
        x_bar.iter_mut().for_each(|v| *v *= inv_n);
        mean_states[t * dx..(t + 1) * dx].copy_from_slice(&x_bar);

        if let Some(bad) = current
            .iter()
            .map(|v| v.abs())
            .find(|v| !v.is_finite() || *v > DIVERGENCE_LIMIT)
        {
            return Err(Error::NonFiniteState { step: t, norm: bad });
        }
        if t == horizon {
            break;
        }

        u_common.copy_from_slice(common_offset.as_slice());
        mat_vec_add(&neg_k_bar, &x_bar, &mut u_common);
        let step_controls = &mut controls[t * n * du..(t + 1) * n * du];
        u_bar.iter_mut().for_each(|v| *v = 0.0);
        let mut player_cost = 0.0;
        for (x, u) in current.chunks(dx).zip(step_controls.chunks_mut(du)) {
            for ((d, xi), m) in deviation.iter_mut().zip(x).zip(&x_bar) {
                *d = xi - m;
            }
            u.copy_from_slice(&u_common);
            mat_vec_add(&neg_k, &deviation, u);
            for (m, v) in u_bar.iter_mut().zip(u.iter()) {
                *m += v;
            }
            player_cost += quad(&model.q, x) + quad(&model.r, u);
        }
        u_bar.iter_mut().for_each(|v| *v *= inv_n);
        per_step_cost[t] = quad(&model.q_bar, &x_bar) + quad(&model.r_bar, &u_bar) + inv_n * player_cost;

        drift.copy_from_slice(noise.m1.as_slice());
        mat_vec_add(&model.a_bar, &x_bar, &mut drift);
        mat_vec_add(&model.b_bar, &u_bar, &mut drift);

        let next = &mut rest[..n * dx];
        for (i, ((x, u), x_next)) in current
            .chunks(dx)
            .zip(step_controls.chunks(du))
            .zip(next.chunks_mut(dx))
            .enumerate()
        {
            mu.copy_from_slice(&drift);
            mat_vec_add(&model.a, x, &mut mu);
            mat_vec_add(&model.b, u, &mut mu);
            sampler.sample(&mut rngs[i], &mut draw);
            for k in 0..dx {
                x_next[k] = mu[k] + (draw[k] - noise.m1[k]);
            }
            for d in cfg.disturbances.iter().filter(|d| d.time == t && d.player.includes(i)) {
                for (xn, imp) in x_next.iter_mut().zip(d.impulse.iter()) {
                    *xn += imp;
                }
            }
            let deviation = quad(&model.q, x_next) - quad(&model.q, &mu) - noise_quad_mean;
            per_step_risk[t * n + i] = deviation * deviation;
        }
    }

    Ok(Trajectory {
        n_players: n,
        dx,
        du,
        horizon,
        states,
        controls,
        mean_states,
        per_step_cost,
        per_step_risk,
        risk_offset: noise.risk_offset(&model.q),
    })
}

/// Independent rollouts for seeds `cfg.seed, cfg.seed + 1, …`, run in
/// parallel and returned in seed order.
pub fn rollout_seeds(
    model: &SystemModel,
    noise: &NoiseModel,
    sampler: &dyn NoiseSampler,
    policy: &AffinePolicy,
    cfg: &RolloutConfig,
    seeds: usize,
) -> Result<Vec<Trajectory>> {
    (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let cfg = RolloutConfig {
                seed: cfg.seed.wrapping_add(s),
                ..cfg.clone()
            };
            rollout_with(model, noise, sampler, policy, &cfg)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64]) -> Self {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let stderr = if samples.len() > 1 {
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }

    /// `|mean − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Time averages after burn-in, with standard errors across trajectories.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmpiricalCosts {
    /// Average stage cost.
    pub j_hat: Estimate,
    /// Player-averaged risk with the policy-independent constant removed;
    /// comparable with the closed-form constraint cost.
    pub j_c_hat: Estimate,
    /// Player-averaged raw risk, comparable with the tolerance `Γ`.
    pub raw_risk_hat: Estimate,
    pub peak_state_deviation: Vec<f64>,
    pub trajectories: usize,
}

pub fn estimate_costs(trajectories: &[Trajectory], burn_in: usize) -> Result<EmpiricalCosts> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::EmptyInput("no trajectories to average".into()))?;
    if trajectories
        .iter()
        .any(|t| t.horizon != first.horizon || t.n_players != first.n_players || t.dx != first.dx)
    {
        return Err(Error::BadShape(
            "trajectories must share horizon, players and state size".into(),
        ));
    }
    if burn_in >= first.horizon {
        return Err(Error::InvalidInput(format!(
            "burn-in {burn_in} must be shorter than the horizon {}",
            first.horizon
        )));
    }
    let steps = (first.horizon - burn_in) as f64;
    let mut costs = Vec::with_capacity(trajectories.len());
    let mut raw = Vec::with_capacity(trajectories.len());
    let mut peak = vec![0.0f64; first.dx];
    for traj in trajectories {
        costs.push(traj.per_step_cost[burn_in..].iter().sum::<f64>() / steps);
        let risk_sum: f64 = traj.per_step_risk[burn_in * traj.n_players..].iter().sum();
        raw.push(risk_sum / (steps * traj.n_players as f64));
        for (p, v) in peak.iter_mut().zip(traj.peak_state_deviation()) {
            *p = p.max(v);
        }
    }
    let shifted: Vec<f64> = raw.iter().zip(trajectories).map(|(r, t)| r - t.risk_offset).collect();
    Ok(EmpiricalCosts {
        j_hat: Estimate::from_samples(&costs),
        j_c_hat: Estimate::from_samples(&shifted),
        raw_risk_hat: Estimate::from_samples(&raw),
        peak_state_deviation: peak,
        trajectories: trajectories.len(),
    })
}
