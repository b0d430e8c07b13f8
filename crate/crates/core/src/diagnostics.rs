//! Stationarity measures, augmented Lagrangian, potential function, and
//! numerical reference oracles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{draw_batch, EstimatorKind};
use crate::linalg::Vector;
use crate::problem::{check_len, exact_nested_gradient, exact_value, Mode, ProblemInstance};
use crate::solver::SolverConfig;

/// Samples per level used for the surrogate gradient of an oracle without
/// exact means.
pub const SURROGATE_SAMPLES: usize = 10_000;

/// Squared residuals of the three first-order conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityTriple {
    /// `‖Ax + Σ B_j y_j − c‖²`.
    pub feas: f64,
    /// `‖F'(x) − Aᵀz‖²`.
    pub grad: f64,
    /// `Σ_j dist(B_jᵀz, ∂r_j(y_j))²`.
    pub subdiff: f64,
    pub total: f64,
    /// Set when `F'` was replaced by a large-batch estimate.
    pub surrogate: bool,
}

impl StationarityTriple {
    fn new(feas: f64, grad: f64, subdiff: f64, surrogate: bool) -> Self {
        Self {
            feas,
            grad,
            subdiff,
            total: feas + grad + subdiff,
            surrogate,
        }
    }
}

/// Per-iterate log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// Cumulative component evaluations spent to produce this iterate.
    pub samples: u64,
    pub primal_residual: f64,
    pub stationarity: StationarityTriple,
    pub aug_lagrangian: f64,
    pub potential: f64,
    /// `‖z^k − z^{k−1}‖`.
    pub dual_step_norm: f64,
    /// `‖x^k − x^{k−1}‖²`.
    pub dx_sq: f64,
    /// `Σ_j ‖y_j^k − y_j^{k−1}‖²`.
    pub dy_sq: f64,
}

/// Exact stationarity triple. Needs exact means of the oracle.
pub fn stationarity(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
) -> Result<StationarityTriple> {
    check_len(x, problem.dim_x(), "x")?;
    problem.check_blocks(y)?;
    check_len(z, problem.dim_p(), "z")?;
    let grad = exact_nested_gradient(problem.oracle.as_ref(), x)?;
    Ok(triple_with_gradient(problem, &grad, x, y, z, false))
}

fn triple_with_gradient(
    problem: &ProblemInstance,
    grad: &Vector,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    surrogate: bool,
) -> StationarityTriple {
    let feas = problem.residual(x, y).norm_squared();
    let mut g = grad.clone();
    g.gemv_tr(-1.0, &problem.a, z, 1.0);
    let subdiff = problem
        .b
        .iter()
        .zip(&problem.regs)
        .zip(y)
        .map(|((bj, reg), yj)| reg.subdiff_distance(yj, &bj.tr_mul(z)).powi(2))
        .sum();
    StationarityTriple::new(feas, g.norm_squared(), subdiff, surrogate)
}

/// Stationarity triple with `F'` replaced by a mini-batch estimate of
/// [`SURROGATE_SAMPLES`] components per level; flagged as surrogate.
pub fn stationarity_surrogate<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rng: &mut R,
) -> Result<StationarityTriple> {
    Ok(surrogate_eval(problem, x, y, z, rng)?.0)
}

fn surrogate_eval<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rng: &mut R,
) -> Result<(StationarityTriple, f64)> {
    check_len(x, problem.dim_x(), "x")?;
    problem.check_blocks(y)?;
    let o = problem.oracle.as_ref();
    let s = draw_batch(o.inner_population(), SURROGATE_SAMPLES, Mode::Online, rng)?;
    let b1 = draw_batch(o.inner_population(), SURROGATE_SAMPLES, Mode::Online, rng)?;
    let b2 = draw_batch(o.outer_population(), SURROGATE_SAMPLES, Mode::Online, rng)?;
    let w = o.mean_inner_value(&s, x);
    let grad = o
        .mean_inner_jacobian(&b1, x)
        .tr_mul(&o.mean_outer_gradient(&b2, &w));
    let f = o.mean_outer_value(&b2, &w);
    Ok((triple_with_gradient(problem, &grad, x, y, z, true), f))
}

/// Stationarity triple and `F(x)`: exact when the oracle has exact means,
/// otherwise the surrogate.
pub fn stationarity_for_trace<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rng: &mut R,
) -> Result<(StationarityTriple, f64)> {
    if problem.oracle.has_exact_means() {
        let o = problem.oracle.as_ref();
        Ok((stationarity(problem, x, y, z)?, exact_value(o, x)?))
    } else {
        surrogate_eval(problem, x, y, z, rng)
    }
}

/// `sqrt` of the stationarity total: the distance from zero to the
/// subdifferential of the (unpenalized) Lagrangian.
pub fn lagrangian_subgrad_dist(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
) -> Result<f64> {
    Ok(stationarity(problem, x, y, z)?.total.sqrt())
}

/// `F(x) + Σ r_j(y_j) − ⟨z, res⟩ + (ρ/2)‖res‖²`, `res = Ax + Σ B_j y_j − c`.
pub fn augmented_lagrangian(
    problem: &ProblemInstance,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rho: f64,
) -> Result<f64> {
    check_len(x, problem.dim_x(), "x")?;
    problem.check_blocks(y)?;
    check_len(z, problem.dim_p(), "z")?;
    let f = exact_value(problem.oracle.as_ref(), x)?;
    Ok(augmented_lagrangian_value(problem, f, x, y, z, rho))
}

/// Augmented Lagrangian with a precomputed `F(x)`.
pub fn augmented_lagrangian_value(
    problem: &ProblemInstance,
    f_value: f64,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rho: f64,
) -> f64 {
    let res = problem.residual(x, y);
    let regs: f64 = problem.regs.iter().zip(y).map(|(r, yj)| r.value(yj)).sum();
    f_value + regs - z.dot(&res) + 0.5 * rho * res.norm_squared()
}

/// `lag + coef_step·‖Δx‖² + coef_epoch·epoch_sum`.
pub fn potential_value(
    lag: f64,
    dx_sq: f64,
    epoch_sum: f64,
    coef_step: f64,
    coef_epoch: f64,
) -> f64 {
    lag + coef_step * dx_sq + coef_epoch * epoch_sum
}

/// One stored iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub x: Vector,
    pub y: Vec<Vector>,
    pub z: Vector,
}

/// First index of the displacement sum entering `R_k`: `(⌈k/q⌉ − 1)q`,
/// clamped at zero (the sum is empty for `k = 0`).
pub fn epoch_window_start(k: usize, q: usize) -> usize {
    if k == 0 {
        0
    } else {
        (k.div_ceil(q) - 1) * q
    }
}

/// Potential `R_k` from stored iterates.
///
/// `R_k = ℒ_ρ(x^k, y^k, z^k) + (3σ_max(G)²/(ρσ_min η²) + 9L_F²/(ρσ_min))‖x^k − x^{k−1}‖²
///        + (2𝒞₂/(ρσ_min)) Σ_{i=(⌈k/q⌉−1)q}^{k−1} ‖x^{i+1} − x^i‖²`,
/// with `x^{−1} := x^0`; the mini-batch estimator has no epoch sum.
pub fn potential(
    problem: &ProblemInstance,
    window: &[Snapshot],
    config: &SolverConfig,
    k: usize,
) -> Result<f64> {
    let find = |i: usize| window.iter().find(|s| s.k == i);
    let available = window.iter().map(|s| s.k).min().unwrap_or(usize::MAX);
    let needed = match config.estimator {
        EstimatorKind::Spider => epoch_window_start(k, config.plan.epoch).min(k.saturating_sub(1)),
        EstimatorKind::Minibatch => k.saturating_sub(1),
    };
    for i in needed..=k {
        if find(i).is_none() {
            return Err(Error::InsufficientHistory { needed, available });
        }
    }
    let at = |i: usize| find(i).expect("window checked");
    let cur = at(k);
    let lag = augmented_lagrangian(problem, &cur.x, &cur.y, &cur.z, config.rho)?;
    let dx_sq = if k == 0 {
        0.0
    } else {
        (&cur.x - &at(k - 1).x).norm_squared()
    };
    let epoch_sum = match config.estimator {
        EstimatorKind::Spider if k > 0 => (epoch_window_start(k, config.plan.epoch)..k)
            .map(|i| (&at(i + 1).x - &at(i).x).norm_squared())
            .sum(),
        _ => 0.0,
    };
    let (coef_step, coef_epoch) = potential_coefficients(problem, config);
    Ok(potential_value(
        lag, dx_sq, epoch_sum, coef_step, coef_epoch,
    ))
}

/// Coefficients of `‖Δx‖²` and of the epoch sum in the potential.
pub fn potential_coefficients(problem: &ProblemInstance, config: &SolverConfig) -> (f64, f64) {
    let sp = &problem.spectral;
    let (_, g_max) = config.g_bounds(sp);
    let rs = config.rho * sp.sigma_min_a;
    let lf = config.profile.lip_f;
    (
        3.0 * g_max * g_max / (rs * config.eta * config.eta) + 9.0 * lf * lf / rs,
        2.0 * config.drift_constant() / rs,
    )
}

/// Right-hand side of the dual-step bound for `‖z^{k+1} − z^k‖²`, assembled
/// from the displacements logged in `trace` (record `i` holds
/// `‖x^i − x^{i−1}‖²`).
pub fn dual_bound_rhs(
    problem: &ProblemInstance,
    config: &SolverConfig,
    trace: &[TraceRecord],
    k: usize,
) -> Result<f64> {
    if k + 1 >= trace.len() {
        return Err(Error::InsufficientHistory {
            needed: k + 1,
            available: trace.len(),
        });
    }
    let sp = &problem.spectral;
    let (_, g_max) = config.g_bounds(sp);
    let lf = config.profile.lip_f;
    let g_term = 3.0 * g_max * g_max / (config.eta * config.eta);
    let dx_k = trace[k + 1].dx_sq;
    let dx_prev = trace[k].dx_sq;
    let noise = match config.estimator {
        EstimatorKind::Minibatch => 18.0 * config.noise_constant(),
        EstimatorKind::Spider => {
            let epoch: f64 = (epoch_window_start(k, config.plan.epoch)..k)
                .map(|i| trace[i + 1].dx_sq)
                .sum();
            6.0 * config.noise_constant() + 6.0 * config.drift_constant() * epoch
        }
    };
    Ok((noise + g_term * dx_k + (g_term + 9.0 * lf * lf) * dx_prev) / sp.sigma_min_a)
}

/// Central differences of `F` along each coordinate.
pub fn finite_diff_gradient(problem: &ProblemInstance, x: &Vector, h: f64) -> Result<Vector> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidStep(h));
    }
    check_len(x, problem.dim_x(), "x")?;
    let o = problem.oracle.as_ref();
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = exact_value(o, &xp)?;
        xp[i] = x[i] - h;
        let fm = exact_value(o, &xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}
