//! Invariant suite run by the `check` subcommand.

use rand::Rng;

use crate::diagnostics::finite_diff_gradient;
use crate::error::Result;
use crate::estimator::{draw_batch, trial_rng, EstimatorKind};
use crate::linalg::{spectral_norm, Vector};
use crate::problem::{exact_nested_gradient, Mode, ProblemInstance, SmoothnessProfile, RANK_TOL};
use crate::solver::{calibrate, run_with, update_x, InitialPoint};

const SAMPLES: usize = 200;
const CHECK_STREAM: u64 = 4;

/// Result of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }
}

fn random_point<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Runs every check against `problem` with randomness drawn from `seed`.
pub fn check_instance(
    problem: &ProblemInstance,
    profile: &SmoothnessProfile,
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    let mut rng = trial_rng(seed, CHECK_STREAM);
    let o = problem.oracle.as_ref();
    let d = problem.dim_x();
    let exact = o.has_exact_means();
    let mut out = Vec::new();

    let sp = &problem.spectral;
    out.push(CheckOutcome::new(
        "coupling-rank",
        sp.sigma_min_a > RANK_TOL,
        format!("sigma_min(AᵀA) = {:.3e}", sp.sigma_min_a),
    ));

    let scale = 1.0 / (d as f64).sqrt();
    let mut worst_jac = 0.0f64;
    let mut worst_grad = 0.0f64;
    let inner = draw_batch(o.inner_population(), SAMPLES, Mode::Online, &mut rng)?;
    let outer = draw_batch(o.outer_population(), SAMPLES, Mode::Online, &mut rng)?;
    for (i, j) in inner.indices().zip(outer.indices()) {
        let x = random_point(&mut rng, d, scale);
        worst_jac = worst_jac.max(spectral_norm(&o.inner_jacobian(i, &x))?);
        worst_grad = worst_grad.max(o.outer_gradient(j, &o.inner_value(i, &x)).norm());
    }
    let tol = 1.0 + 1e-9;
    out.push(CheckOutcome::new(
        "profile-bounds",
        worst_jac <= profile.ell1 * tol && worst_grad <= profile.ell2 * tol,
        format!(
            "max ‖J‖ = {worst_jac:.4e} (ℓ1 = {:.4e}), max ‖∇f2‖ = {worst_grad:.4e} (ℓ2 = {:.4e})",
            profile.ell1, profile.ell2
        ),
    ));

    if exact {
        let mut worst_lip = 0.0f64;
        let mut worst_fd = 0.0f64;
        for _ in 0..5 {
            let x = random_point(&mut rng, d, scale);
            let x2 = random_point(&mut rng, d, scale);
            let g = exact_nested_gradient(o, &x)?;
            let g2 = exact_nested_gradient(o, &x2)?;
            worst_lip = worst_lip.max((&g - &g2).norm() / (&x - &x2).norm());
            let fd = finite_diff_gradient(problem, &x, 1e-5)?;
            worst_fd = worst_fd.max((&fd - &g).norm() / g.norm().max(1e-12));
        }
        out.push(CheckOutcome::new(
            "gradient-lipschitz",
            worst_lip <= profile.lip_f * tol,
            format!("max ratio {worst_lip:.4e} (L_F = {:.4e})", profile.lip_f),
        ));
        out.push(CheckOutcome::new(
            "chain-rule",
            worst_fd <= 1e-5,
            format!("max relative error vs finite differences {worst_fd:.3e}"),
        ));
    }

    let mut config = calibrate(
        problem,
        profile,
        EstimatorKind::Minibatch,
        problem.mode(),
        0.5,
        1.0,
        None,
    )?;
    let x = random_point(&mut rng, d, scale);
    let v = random_point(&mut rng, d, 1.0);
    let z = random_point(&mut rng, problem.dim_p(), 1.0);
    let y: Vec<Vector> = problem
        .block_dims()
        .into_iter()
        .map(|n| random_point(&mut rng, n, 1.0))
        .collect();
    let x_new = update_x(problem, &config, &x, &v, &y, &z)?;
    let dx = &x_new - &x;
    let mut foc =
        &v - problem.a.tr_mul(&z) + problem.a.tr_mul(&problem.residual(&x_new, &y)) * config.rho;
    foc += (&dx * config.r - problem.a.tr_mul(&(&problem.a * &dx)) * (config.rho * config.eta))
        / config.eta;
    out.push(CheckOutcome::new(
        "x-update-optimality",
        foc.norm() <= 1e-8 * (1.0 + v.norm()),
        format!("first-order residual {:.3e}", foc.norm()),
    ));

    config.iterations = 20;
    config.seed = seed;
    let mut worst_dual = 0.0f64;
    let report = run_with(problem, &config, &InitialPoint::default(), |e| {
        let res = problem.residual(e.x, e.y).norm();
        let gap = ((e.z - e.z_prev).norm() - config.rho * res).abs();
        worst_dual = worst_dual.max(gap / (1.0 + config.rho * res));
    })?;
    out.push(CheckOutcome::new(
        "dual-step",
        worst_dual <= 1e-12,
        format!("max |‖Δz‖ − ρ‖res‖| (relative) {worst_dual:.3e}"),
    ));
    let recount: u64 = (0..config.iterations)
        .map(|k| {
            config
                .plan
                .samples_for_step(o, config.estimator, config.mode, k)
        })
        .sum();
    out.push(CheckOutcome::new(
        "sample-accounting",
        recount == report.total_samples,
        format!("reported {} recomputed {recount}", report.total_samples),
    ));

    let mut worst_prox = f64::NEG_INFINITY;
    for reg in &problem.regs {
        for _ in 0..SAMPLES / 4 {
            let n = 5;
            let t = rng.random_range(0.05..2.0);
            let v = random_point(&mut rng, n, 2.0);
            let p = reg.prox(t, &v)?;
            let obj = |u: &Vector| reg.value(u) + (u - &v).norm_squared() / (2.0 * t);
            let q = &p + random_point(&mut rng, n, 0.1);
            worst_prox = worst_prox.max(obj(&p) - obj(&q));
        }
    }
    out.push(CheckOutcome::new(
        "prox-minimality",
        worst_prox <= 1e-12,
        format!("max objective excess at prox point {worst_prox:.3e}"),
    ));
    Ok(out)
}
