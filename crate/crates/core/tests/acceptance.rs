//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; the process fails if any
//! criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use mfrlqr::dual::{concavity_violations, dual_function_grid, solve, AscentOptions};
use mfrlqr::linalg::{
    dare_gain, dare_residual, dlyap_residual, solve_dare, solve_dlyap, spectral_radius, Matrix, SolverOptions, Vector,
};
use mfrlqr::model::{transformed_noise, NoiseModel, RiskConfig, SystemModel};
use mfrlqr::risk::{average_cost, constraint_cost};
use mfrlqr::scenario::Scenario;
use mfrlqr::sim::{estimate_costs, rollout, rollout_seeds, GaussianSampler};
use mfrlqr::synthesis::{risk_neutral, synthesize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    bisect_multiplier, expected_stacked_gain, finite_horizon_gain, max_abs_diff, random_lqr, stacked_gain, Scalar,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn shipped() -> Vec<Scenario> {
    vec![scenario("microgrid"), scenario("scalar_benchmark")]
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn s(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}

fn riccati_certification() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let opts = SolverOptions::default();
    let (mut worst_dare, mut worst_lyap, mut worst_rho) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100 {
        let dx = 1 + i % 6;
        let du = 1 + (i / 6) % 3.min(dx);
        let (a, b, q, r) = random_lqr(&mut rng, dx, du);
        let p = solve_dare(&a, &b, &q, &r, &opts).map_err(|e| format!("instance {i}: {e}"))?;
        let k = dare_gain(&a, &b, &r, &p).map_err(|e| e.to_string())?;
        let f = &a - &b * &k;
        let w = &q + k.transpose() * &r * &k;
        let v = solve_dlyap(&f, &w, &opts).map_err(|e| format!("instance {i}: {e}"))?;
        worst_dare = worst_dare.max(dare_residual(&a, &b, &q, &r, &p).map_err(|e| e.to_string())?.norm());
        worst_lyap = worst_lyap.max(dlyap_residual(&f, &w, &v).norm());
        worst_rho = worst_rho.max(spectral_radius(&f).map_err(|e| e.to_string())?);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_dare <= 1e-9 && worst_lyap <= 1e-9 && worst_rho < 1.0 && secs < 10.0,
        format!("max DARE residual {worst_dare:.2e}, max Lyapunov residual {worst_lyap:.2e}, max rho {worst_rho:.4}, {secs:.2}s"),
    )
}

fn oracle_gains() -> Outcome {
    const HORIZON: usize = 500;
    let mut worst = 0.0f64;

    // Scalar: closed-form Riccati roots and the finite-horizon recursion.
    let inst = Scalar {
        a: 1.0,
        a_bar: 0.1,
        b: 1.0,
        b_bar: 0.2,
        q: 1.0,
        q_bar: 0.5,
        r: 1.0,
        r_bar: 0.3,
        n: 4,
        m1: 0.5,
        m2: 1.0,
    };
    let model = SystemModel::new(s(1.0), s(0.1), s(1.0), s(0.2), s(1.0), s(0.5), s(1.0), s(0.3), 4).unwrap();
    let noise = NoiseModel::gaussian(Vector::from_element(1, 0.5), s(1.0), &model.q).unwrap();
    for lambda in [0.0, 0.3, 2.0] {
        let gains = synthesize(&model, &noise, lambda).map_err(|e| e.to_string())?;
        let exact = inst.solve(lambda);
        let w = 1.0 + 4.0 * lambda;
        let k_fh = finite_horizon_gain(&s(1.0), &s(1.0), &s(w), &s(1.0), HORIZON);
        let kb_fh = finite_horizon_gain(&s(1.1), &s(1.2), &s(w + 0.5), &s(1.3), HORIZON);
        worst = worst
            .max((gains.policy.k[(0, 0)] - k_fh[(0, 0)]).abs())
            .max((gains.policy.k_bar[(0, 0)] - kb_fh[(0, 0)]).abs())
            .max((gains.policy.k[(0, 0)] - exact.k).abs())
            .max((gains.policy.k_bar[(0, 0)] - exact.k_bar).abs())
            .max((gains.policy.tau_bar[0] - exact.tau_bar).abs());
    }

    // 2×2: the stacked n-player problem solved without any decomposition.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let (a, b, q, r) = random_lqr(&mut rng, 2, 1);
        let a = &a * (0.9 / spectral_radius(&a).unwrap().max(0.9));
        let a_bar = common::gaussian_matrix(&mut rng, 2, 2, 0.1);
        let b_bar = common::gaussian_matrix(&mut rng, 2, 1, 0.1);
        let q_bar = Matrix::identity(2, 2) * 0.3;
        let r_bar = s(0.2);
        let n = 3;
        let model = SystemModel::new(
            a.clone(),
            a_bar.clone(),
            b.clone(),
            b_bar.clone(),
            q.clone(),
            q_bar.clone(),
            r.clone(),
            r_bar.clone(),
            n,
        )
        .unwrap();
        let m2 = Matrix::from_row_slice(2, 2, &[0.2, 0.05, 0.05, 0.1]);
        let noise = NoiseModel::centered_gaussian(m2.clone(), &q).unwrap();
        for lambda in [0.0, 1.5] {
            let gains = synthesize(&model, &noise, lambda).map_err(|e| e.to_string())?;
            let stacked = stacked_gain(
                (&a, &a_bar, &b, &b_bar),
                (&q, &q_bar, &r, &r_bar),
                &m2,
                lambda,
                n,
                HORIZON,
            );
            worst = worst.max(max_abs_diff(
                &stacked,
                &expected_stacked_gain(&gains.policy.k, &gains.policy.k_bar, n),
            ));
        }
    }

    let unit = SystemModel::decoupled(s(1.0), s(1.0), s(1.0), s(1.0), 1).unwrap();
    let k0 = synthesize(&unit, &NoiseModel::centered_gaussian(s(1.0), &s(1.0)).unwrap(), 0.0)
        .map_err(|e| e.to_string())?
        .policy
        .k[(0, 0)];
    let golden_err = (k0 - 0.6180339887).abs();
    check(
        worst <= 1e-6 && golden_err <= 1e-9,
        format!("max gain gap to oracles {worst:.2e}, scalar gain {k0:.12} (error {golden_err:.1e})"),
    )
}

fn n_independence() -> Outcome {
    let mut worst = 0.0f64;
    for sc in shipped() {
        let model = sc.model().map_err(|e| e.to_string())?;
        let noise = sc.noise_model().map_err(|e| e.to_string())?;
        let lambda_star = solve(&model, &noise, &sc.risk, &sc.ascent)
            .map_err(|e| e.to_string())?
            .lambda_star;
        for lambda in [0.0, lambda_star] {
            let small = synthesize(&model.with_players(2).unwrap(), &noise, lambda).map_err(|e| e.to_string())?;
            let large = synthesize(&model.with_players(1000).unwrap(), &noise, lambda).map_err(|e| e.to_string())?;
            worst = worst
                .max(max_abs_diff(&small.policy.k, &large.policy.k))
                .max(max_abs_diff(&small.policy.k_bar, &large.policy.k_bar));
        }
    }
    check(
        worst <= 1e-9,
        format!("max |K(n=2) − K(n=1000)| over shipped scenarios {worst:.2e}"),
    )
}

fn monte_carlo_agreement() -> Outcome {
    let start = Instant::now();
    let sc = scenario("scalar_benchmark");
    let model = sc.model().map_err(|e| e.to_string())?;
    let noise = sc.noise_model().map_err(|e| e.to_string())?;
    let budget = sc.budget().map_err(|e| e.to_string())?;
    let policy = solve(&model, &noise, &sc.risk, &sc.ascent)
        .map_err(|e| e.to_string())?
        .gains
        .policy;
    let j_c = constraint_cost(&model, &noise, &policy, budget)
        .map_err(|e| e.to_string())?
        .j_c_total;
    let j = average_cost(&model, &noise, &policy).map_err(|e| e.to_string())?.total;

    let cfg = sc.rollout_config(1);
    if cfg.horizon != 100_000 {
        return Err(format!("benchmark horizon is {}, expected 100000", cfg.horizon));
    }
    let sampler = GaussianSampler::new(&noise).map_err(|e| e.to_string())?;
    let trajs = rollout_seeds(&model, &noise, &sampler, &policy, &cfg, 32).map_err(|e| e.to_string())?;
    let est = estimate_costs(&trajs, 10_000).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let zc = (est.j_c_hat.mean - j_c) / est.j_c_hat.stderr;
    let zj = (est.j_hat.mean - j) / est.j_hat.stderr;
    check(
        zc.abs() <= 3.0 && zj.abs() <= 3.0 && secs < 60.0,
        format!(
            "J_c_hat {:.5} vs {j_c:.5} ({zc:+.2} se), J_hat {:.5} vs {j:.5} ({zj:+.2} se), {secs:.1}s",
            est.j_c_hat.mean, est.j_hat.mean
        ),
    )
}

fn dual_convergence() -> Outcome {
    let sc = scenario("scalar_benchmark");
    let model = sc.model().map_err(|e| e.to_string())?;
    let noise = sc.noise_model().map_err(|e| e.to_string())?;
    let budget = sc.budget().map_err(|e| e.to_string())?;
    let res = solve(&model, &noise, &sc.risk, &sc.ascent).map_err(|e| e.to_string())?;
    let iters = res.trace.records.len();
    let gap = (res.assessment.j_c_total - budget).abs();
    let slack = (res.lambda_star * (res.assessment.j_c_total - budget)).abs();

    let inst = Scalar {
        a: model.a[(0, 0)],
        a_bar: model.a_bar[(0, 0)],
        b: model.b[(0, 0)],
        b_bar: model.b_bar[(0, 0)],
        q: model.q[(0, 0)],
        q_bar: model.q_bar[(0, 0)],
        r: model.r[(0, 0)],
        r_bar: model.r_bar[(0, 0)],
        n: model.n_players,
        m1: noise.m1[0],
        m2: noise.m2[(0, 0)],
    };
    let oracle = bisect_multiplier(|l| inst.solve(l).j_c, budget, 100.0, 40);
    let rel = (res.lambda_star - oracle).abs() / oracle;
    check(
        res.converged && iters <= 500 && gap <= 1e-2 * budget && slack <= 1e-3 * budget && oracle > 0.0 && rel <= 1e-3,
        format!(
            "{iters} iterations, lambda* {:.6} vs bisection {oracle:.6} (rel {rel:.1e}), |J_c − Λ| {gap:.1e}, |λ*(J_c − Λ)| {slack:.1e}",
            res.lambda_star
        ),
    )
}

fn microgrid_violation() -> Outcome {
    let sc = scenario("microgrid");
    let model = sc.model().map_err(|e| e.to_string())?;
    let noise = sc.noise_model().map_err(|e| e.to_string())?;
    let budget = sc.budget().map_err(|e| e.to_string())?;
    let res = solve(&model, &noise, &sc.risk, &sc.ascent).map_err(|e| e.to_string())?;
    let recs = &res.trace.records;
    let tail = &recs[recs.len() - (recs.len() / 10).max(1)..];
    let worst = tail.iter().map(|r| r.violation).fold(0.0, f64::max);
    let first = recs[0].violation;
    check(
        first > 0.0 && worst <= 1e-3 * budget,
        format!(
            "{} iterations, initial violation {first:.1}, max violation over final 10% {worst:.2e} (limit {:.1e})",
            recs.len(),
            1e-3 * budget
        ),
    )
}

fn microgrid_overshoot() -> Outcome {
    let sc = scenario("microgrid");
    let model = sc.model().map_err(|e| e.to_string())?;
    let noise = sc.noise_model().map_err(|e| e.to_string())?;
    let constrained = solve(&model, &noise, &sc.risk, &sc.ascent)
        .map_err(|e| e.to_string())?
        .gains
        .policy;
    let neutral = risk_neutral(&model, &noise).map_err(|e| e.to_string())?.policy;
    let (seed0, seeds, _) = sc.rollout_seeds();
    if sc.rollout.as_ref().is_none_or(|r| r.disturbances.is_empty()) {
        return Err("microgrid scenario has no pinned disturbances".into());
    }
    let mut wins = 0;
    let mut ratio_sum = 0.0;
    for s in 0..seeds as u64 {
        let cfg = sc.rollout_config(seed0 + s);
        let a = rollout(&model, &noise, &constrained, &cfg)
            .map_err(|e| e.to_string())?
            .peak_state_deviation()[0];
        let b = rollout(&model, &noise, &neutral, &cfg)
            .map_err(|e| e.to_string())?
            .peak_state_deviation()[0];
        wins += usize::from(a <= b);
        ratio_sum += a / b;
    }
    check(
        seeds == 16 && wins >= 14,
        format!(
            "constrained peak |Δf| ≤ neutral on {wins}/{seeds} seeds, mean peak ratio {:.3}",
            ratio_sum / seeds as f64
        ),
    )
}

fn dual_concavity() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for sc in shipped() {
        let model = sc.model().map_err(|e| e.to_string())?;
        let noise = sc.noise_model().map_err(|e| e.to_string())?;
        let budget = sc.budget().map_err(|e| e.to_string())?;
        let grid = sc
            .lambda_grid()
            .map_err(|e| e.to_string())?
            .ok_or("scenario without lambda grid")?;
        let points = dual_function_grid(&model, &noise, budget, &grid).map_err(|e| e.to_string())?;
        let bad = concavity_violations(&points, 1e-9);
        ok &= grid.len() == 50 && bad.is_empty();
        details.push(format!("{}: {} points, {} violations", sc.name, grid.len(), bad.len()));
    }
    check(ok, details.join("; "))
}

fn degeneracy() -> Outcome {
    let mut failures = Vec::new();
    let model = SystemModel::new(s(1.0), s(0.1), s(1.0), s(0.2), s(1.0), s(0.5), s(1.0), s(0.3), 4).unwrap();
    let opts = AscentOptions::default();

    // No noise at all: nothing to constrain.
    let silent = NoiseModel::centered_gaussian(s(0.0), &model.q).unwrap();
    let res = solve(&model, &silent, &RiskConfig::Lambda(1.0), &opts).map_err(|e| e.to_string())?;
    if res.assessment.j_c_total != 0.0 || res.lambda_star != 0.0 {
        failures.push(format!(
            "zero noise gave J_c {} and lambda* {}",
            res.assessment.j_c_total, res.lambda_star
        ));
    }

    // One player: the deviation subsystem carries nothing.
    let noise = NoiseModel::gaussian(Vector::from_element(1, 0.5), s(1.0), &model.q).unwrap();
    let single = model.with_players(1).unwrap();
    let split = transformed_noise(&noise, 1).map_err(|e| e.to_string())?;
    let gains = synthesize(&single, &noise, 0.7).map_err(|e| e.to_string())?;
    let assess = constraint_cost(&single, &noise, &gains.policy, 1.0).map_err(|e| e.to_string())?;
    let avg = average_cost(&single, &noise, &gains.policy).map_err(|e| e.to_string())?;
    if split.m2_tilde.amax() != 0.0
        || split.m1_tilde.amax() != 0.0
        || assess.j_c_tilde_per_player != 0.0
        || avg.tilde != 0.0
        || gains.policy.tau.amax() != 0.0
    {
        failures.push("n = 1 left nonzero deviation quantities".into());
    }

    // A budget that never binds reproduces the risk-neutral controller.
    let res = solve(&model, &noise, &RiskConfig::Lambda(1e12), &opts).map_err(|e| e.to_string())?;
    let neutral = risk_neutral(&model, &noise).map_err(|e| e.to_string())?.policy;
    let gap = max_abs_diff(&res.gains.policy.k, &neutral.k)
        .max(max_abs_diff(&res.gains.policy.k_bar, &neutral.k_bar))
        .max((&res.gains.policy.tau_bar - &neutral.tau_bar).amax());
    if gap > 1e-10 || res.lambda_star != 0.0 {
        failures.push(format!(
            "loose budget gave lambda* {} and gain gap {gap:.1e}",
            res.lambda_star
        ));
    }

    if failures.is_empty() {
        Ok(format!(
            "zero noise, single player and loose budget cases hold (gain gap {gap:.0e})"
        ))
    } else {
        Err(failures.join("; "))
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("Riccati/Lyapunov certification", riccati_certification),
        ("oracle gain equivalence", oracle_gains),
        ("n-independence of gains", n_independence),
        ("Monte Carlo agreement", monte_carlo_agreement),
        ("dual convergence and KKT", dual_convergence),
        ("microgrid constraint violation", microgrid_violation),
        ("microgrid overshoot comparison", microgrid_overshoot),
        ("dual concavity", dual_concavity),
        ("degenerate cases", degeneracy),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
