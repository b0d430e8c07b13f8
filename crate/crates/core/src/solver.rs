//! Linearized multi-block ADMM driven by a stochastic nested gradient
//! estimator.
//!
//! Each iteration: estimate the gradient at `x`, update the `y` blocks in
//! order with proximal steps, take a linearized `x` step, then the dual step
//! `z ← z − ρ(Ax + Σ B_j y_j − c)`.

use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    augmented_lagrangian_value, potential_value, stationarity_for_trace, StationarityTriple,
    TraceRecord,
};
use crate::error::{Error, Result};
use crate::estimator::{
    minibatch_step, spider_recurse, spider_refresh, trial_rng, variance_bound_minibatch,
    variance_bound_spider, BatchPlan, BatchSizes, EstimatorKind, EstimatorState,
};
use crate::linalg::{Matrix, Vector};
use crate::problem::{
    check_len, Mode, Population, ProblemInstance, SmoothnessProfile, SpectralSummary,
};

/// Relative slack allowed on the `r` and `τ_j` lower bounds.
const BOUND_SLACK: f64 = 1e-12;
/// Default iteration budget when none is given.
pub const DEFAULT_ITERATIONS: usize = 1000;
/// Cap on any calibrated batch size.
pub const MAX_BATCH: usize = 1 << 40;

/// Every scalar the iteration needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Penalty of the augmented Lagrangian.
    pub rho: f64,
    /// Primal step.
    pub eta: f64,
    /// Step fraction in `(0, 1)` used by calibration.
    pub alpha: f64,
    /// Linearization scalar of the `x` block, `G = rI − ρηAᵀA`.
    pub r: f64,
    /// Linearization scalars of the `y` blocks, `H_j = τ_j I − ρB_jᵀB_j`.
    pub tau: Vec<f64>,
    pub plan: BatchPlan,
    pub iterations: usize,
    pub estimator: EstimatorKind,
    pub mode: Mode,
    pub seed: u64,
    /// Constants used by the potential and the variance bounds.
    pub profile: SmoothnessProfile,
    /// Stop once `sqrt(stationarity total)` reaches this value.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl SolverConfig {
    /// Extreme eigenvalues `(σ_min(G), σ_max(G))` of `G = rI − ρηAᵀA`.
    pub fn g_bounds(&self, spectral: &SpectralSummary) -> (f64, f64) {
        let s = self.rho * self.eta;
        (
            self.r - s * spectral.sigma_max_a,
            self.r - s * spectral.sigma_min_a,
        )
    }

    /// Smallest eigenvalue over the `H_j`.
    pub fn h_min(&self, spectral: &SpectralSummary) -> f64 {
        self.tau
            .iter()
            .zip(&spectral.sigma_max_b)
            .map(|(t, sb)| t - self.rho * sb)
            .fold(f64::INFINITY, f64::min)
    }

    /// Variance constant multiplying the epoch displacement sum (SPIDER) or
    /// zero (mini-batch).
    pub fn drift_constant(&self) -> f64 {
        match self.estimator {
            EstimatorKind::Spider => {
                variance_bound_spider(&self.profile, &self.plan, self.mode).drift
            }
            EstimatorKind::Minibatch => 0.0,
        }
    }

    /// Constant part of the estimator error bound.
    pub fn noise_constant(&self) -> f64 {
        match self.estimator {
            EstimatorKind::Spider => {
                variance_bound_spider(&self.profile, &self.plan, self.mode).refresh
            }
            EstimatorKind::Minibatch => variance_bound_minibatch(&self.profile, &self.plan.step),
        }
    }

    /// Descent constant `Λ` of the potential and `γ = min(σ_min(H), Λ)`.
    /// Reported for diagnostics; neither gates execution.
    pub fn descent_constants(&self, spectral: &SpectralSummary) -> (f64, f64) {
        let (g_min, g_max) = self.g_bounds(spectral);
        let l = self.profile.lip_f;
        let rs = self.rho * spectral.sigma_min_a;
        let base = g_min / self.eta + rs / 2.0 - l - 9.0 * l * l / rs;
        let lambda = match self.estimator {
            EstimatorKind::Minibatch => base - 3.0 * g_max * g_max / (rs * self.eta * self.eta),
            EstimatorKind::Spider => {
                let c2 = self.drift_constant();
                let q = self.plan.epoch as f64;
                base - 6.0 * g_max * g_max / (rs * self.eta * self.eta)
                    - 2.0 * c2 / rs
                    - c2 * q / (2.0 * l)
                    - 6.0 * c2 * q / rs
            }
        };
        (lambda, lambda.min(self.h_min(spectral)))
    }

    /// Checks positivity and the `G ⪰ I`, `H_j ⪰ I` lower bounds.
    pub fn validate(&self, problem: &ProblemInstance) -> Result<()> {
        let sp = &problem.spectral;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::ConfigError(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::ConfigError(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.iterations == 0 {
            return Err(Error::EmptyRun);
        }
        self.plan.validate()?;
        self.profile.validate()?;
        self.check_r(sp)?;
        if self.tau.len() != problem.num_blocks() {
            return Err(Error::ConfigError(format!(
                "{} tau values for {} blocks",
                self.tau.len(),
                problem.num_blocks()
            )));
        }
        for j in 0..self.tau.len() {
            self.check_tau(sp, j)?;
        }
        if self.mode == Mode::FiniteSum && problem.mode() != Mode::FiniteSum {
            return Err(Error::UnsupportedMode);
        }
        if let Some(t) = self.stop_at {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::InvalidTolerance(t));
            }
        }
        Ok(())
    }

    fn check_r(&self, sp: &SpectralSummary) -> Result<()> {
        let lower = self.rho * self.eta * sp.sigma_max_a + 1.0;
        if self.r < lower * (1.0 - BOUND_SLACK) {
            return Err(Error::ConfigError(format!(
                "r = {} is below ρησ_max(AᵀA) + 1 = {lower}",
                self.r
            )));
        }
        Ok(())
    }

    fn check_tau(&self, sp: &SpectralSummary, j: usize) -> Result<()> {
        let lower = self.rho * sp.sigma_max_b[j] + 1.0;
        if self.tau[j] < lower * (1.0 - BOUND_SLACK) {
            return Err(Error::ConfigError(format!(
                "tau[{j}] = {} is below ρσ_max(B_jᵀB_j) + 1 = {lower}",
                self.tau[j]
            )));
        }
        Ok(())
    }
}

/// Penalty constant of the calibration rule `ρ = c·L_F·κ/(σ_min(AᵀA)·α)`.
pub fn penalty_constant() -> f64 {
    98f64.sqrt()
}

fn ceil_batch(v: f64) -> Result<usize> {
    if !v.is_finite() || v > MAX_BATCH as f64 {
        return Err(Error::ConfigError(format!(
            "calibrated batch size {v} is out of range"
        )));
    }
    Ok((v.ceil() as usize).max(1))
}

/// Recursion batch sizes that make each drift term equal `L_F²/q`.
fn recursion_sizes(p: &SmoothnessProfile, q: usize) -> Result<BatchSizes> {
    let l4 = p.ell1.powi(4);
    let lf2 = p.lip_f * p.lip_f;
    let q = q as f64;
    Ok(BatchSizes {
        value: ceil_batch(27.0 * l4 * q / lf2)?,
        jacobian: ceil_batch(3.0 * p.ell2 * p.ell2 * p.lip1 * p.lip1 * q / lf2)?,
        gradient: ceil_batch(27.0 * l4 * p.lip2 * p.lip2 * q / lf2)?,
    })
}

/// Batch sizes that put each of the three variance terms at `ε²/9`.
fn equal_allocation(p: &SmoothnessProfile, eps: f64, value_lip2: bool) -> Result<BatchSizes> {
    let share = eps * eps / 9.0;
    let l1sq = p.ell1 * p.ell1;
    let value_scale = if value_lip2 { p.lip2 * p.lip2 } else { 1.0 };
    Ok(BatchSizes {
        value: ceil_batch(27.0 * l1sq * value_scale * p.delta * p.delta / share)?,
        jacobian: ceil_batch(3.0 * p.ell2 * p.ell2 * p.sigma1 * p.sigma1 / share)?,
        gradient: ceil_batch(27.0 * l1sq * p.sigma2 * p.sigma2 / share)?,
    })
}

/// Builds a [`SolverConfig`] from the calibration rules.
///
/// `ρ`, `η`, `r`, `τ_j` follow the step-size and penalty conditions of the
/// descent analysis; batch sizes and epoch length follow the estimator and
/// mode. `η` and `r` depend on each other through `σ_min(G)`; the first pass
/// uses the lower bound `σ_min(G) = 1`, sets `r`, and the second pass
/// recomputes `η` from the resulting `G`.
pub fn calibrate(
    problem: &ProblemInstance,
    profile: &SmoothnessProfile,
    estimator: EstimatorKind,
    mode: Mode,
    alpha: f64,
    epsilon: f64,
    epoch_override: Option<usize>,
) -> Result<SolverConfig> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidTolerance(epsilon));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ConfigError(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    profile.validate()?;
    if mode == Mode::FiniteSum && problem.mode() != Mode::FiniteSum {
        return Err(Error::UnsupportedMode);
    }
    if epoch_override == Some(0) {
        return Err(Error::ConfigError("epoch length must be at least 1".into()));
    }
    let sp = &problem.spectral;
    let lf = profile.lip_f;
    let rho = penalty_constant() * lf * sp.kappa / (sp.sigma_min_a * alpha);

    let eta0 = 2.0 * alpha / (3.0 * lf);
    let r = rho * eta0 * sp.sigma_max_a + 1.0;
    let g_min = r - rho * eta0 * sp.sigma_max_a;
    let eta = 2.0 * alpha * g_min / (3.0 * lf);
    let r = r.max(rho * eta * sp.sigma_max_a + 1.0);
    let tau = sp.sigma_max_b.iter().map(|sb| rho * sb + 1.0).collect();

    let plan = match (estimator, mode) {
        (EstimatorKind::Minibatch, _) => {
            BatchPlan::minibatch(equal_allocation(profile, epsilon, true)?)
        }
        (EstimatorKind::Spider, Mode::FiniteSum) => {
            let (n1, n2) = match (
                problem.oracle.inner_population(),
                problem.oracle.outer_population(),
            ) {
                (Population::Finite(a), Population::Finite(b)) => (a, b),
                _ => return Err(Error::UnsupportedMode),
            };
            let q = epoch_override
                .unwrap_or(((2 * n1 + n2) as f64).sqrt().ceil() as usize)
                .max(1);
            BatchPlan {
                refresh: BatchSizes {
                    value: n1,
                    jacobian: n1,
                    gradient: n2,
                },
                step: recursion_sizes(profile, q)?,
                epoch: q,
            }
        }
        (EstimatorKind::Spider, Mode::Online) => {
            let q = epoch_override
                .unwrap_or((1.0 / epsilon).ceil() as usize)
                .max(1);
            BatchPlan {
                refresh: equal_allocation(profile, epsilon, false)?,
                step: recursion_sizes(profile, q)?,
                epoch: q,
            }
        }
    };

    Ok(SolverConfig {
        rho,
        eta,
        alpha,
        r,
        tau,
        plan,
        iterations: DEFAULT_ITERATIONS,
        estimator,
        mode,
        seed: 0,
        profile: *profile,
        stop_at: None,
    })
}

/// `(x, y, z)` plus the previous `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x: Vector,
    pub y: Vec<Vector>,
    pub z: Vector,
    pub x_prev: Vector,
    pub k: usize,
}

/// Starting point of a run. A missing dual start is filled with the
/// least-squares multiplier `argmin_z ‖Aᵀz − v₀‖` of the first gradient
/// estimate.
#[derive(Debug, Clone, Default)]
pub struct InitialPoint {
    pub x: Option<Vector>,
    pub y: Option<Vec<Vector>>,
    pub z: Option<Vector>,
}

/// `prox(reg_j, 1/τ_j, y_j − (ρ/τ_j) B_jᵀ(Ax + Σ_i B_i y_i − c − z/ρ))`, with
/// `y` holding the already-updated blocks before `j`.
pub fn update_y_block(
    problem: &ProblemInstance,
    config: &SolverConfig,
    x: &Vector,
    y: &[Vector],
    j: usize,
    z: &Vector,
) -> Result<Vector> {
    if j >= problem.num_blocks() {
        return Err(Error::DimensionError(format!(
            "block {j} of {}",
            problem.num_blocks()
        )));
    }
    config.check_tau(&problem.spectral, j)?;
    problem.check_blocks(y)?;
    let shifted = problem.residual(x, y) - z / config.rho;
    y_block_from_residual(problem, config, y, j, &shifted)
}

fn y_block_from_residual(
    problem: &ProblemInstance,
    config: &SolverConfig,
    y: &[Vector],
    j: usize,
    shifted: &Vector,
) -> Result<Vector> {
    let tau = config.tau[j];
    let mut w = y[j].clone();
    w.gemv_tr(-config.rho / tau, &problem.b[j], shifted, 1.0);
    problem.regs[j].prox(1.0 / tau, &w)
}

/// `x − (η/r)[v − Aᵀz + ρAᵀ(Ax + Σ B_j y_j − c)]`.
pub fn update_x(
    problem: &ProblemInstance,
    config: &SolverConfig,
    x: &Vector,
    v: &Vector,
    y_new: &[Vector],
    z: &Vector,
) -> Result<Vector> {
    config.check_r(&problem.spectral)?;
    check_len(v, problem.dim_x(), "v")?;
    problem.check_blocks(y_new)?;
    let res = problem.residual(x, y_new);
    Ok(x_from_residual(problem, config, x, v, &res, z))
}

fn x_from_residual(
    problem: &ProblemInstance,
    config: &SolverConfig,
    x: &Vector,
    v: &Vector,
    res: &Vector,
    z: &Vector,
) -> Vector {
    let dual = res * config.rho - z;
    let mut dir = v.clone();
    dir.gemv_tr(1.0, &problem.a, &dual, 1.0);
    x - dir * (config.eta / config.r)
}

/// `z − ρ(A x_new + Σ B_j y_new_j − c)`.
pub fn update_z(
    problem: &ProblemInstance,
    config: &SolverConfig,
    x_new: &Vector,
    y_new: &[Vector],
    z: &Vector,
) -> Result<Vector> {
    check_len(z, problem.dim_p(), "z")?;
    problem.check_blocks(y_new)?;
    Ok(z - problem.residual(x_new, y_new) * config.rho)
}

/// `argmin_z ‖Aᵀz − v‖` (the minimum-norm solution, `A(AᵀA)⁻¹v`).
pub fn least_squares_multiplier(a: &Matrix, v: &Vector) -> Result<Vector> {
    let gram = a.tr_mul(a);
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::InvalidMatrix("AᵀA is not positive definite".into()))?;
    Ok(a * chol.solve(v))
}

/// Everything an observer sees after one iteration `k → k+1`.
#[derive(Debug)]
pub struct IterationEvent<'a> {
    pub k: usize,
    pub x_prev: &'a Vector,
    pub y_prev: &'a [Vector],
    pub z_prev: &'a Vector,
    pub x: &'a Vector,
    pub y: &'a [Vector],
    pub z: &'a Vector,
    pub estimate: &'a EstimatorState,
    pub record: &'a TraceRecord,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vector,
    pub y: Vec<Vector>,
    pub z: Vector,
    /// Index of the returned iterate, drawn uniformly from `1..=iterations run`.
    pub output_index: usize,
    /// One record per iterate, starting with the initial point at `k = 0`.
    pub trace: Vec<TraceRecord>,
    pub total_samples: u64,
    pub wall_time: Duration,
    /// Final iterate, regardless of the output draw.
    pub last: IterateState,
    /// `(Λ, γ)` of the configuration.
    pub descent_constants: (f64, f64),
}

impl SolveReport {
    /// Minimum of `stationarity.total` over records `1..`.
    pub fn best_stationarity(&self) -> f64 {
        self.trace
            .iter()
            .skip(1)
            .map(|r| r.stationarity.total)
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples consumed when `sqrt(stationarity.total)` first reached `eps`.
    pub fn samples_to(&self, eps: f64) -> Option<(usize, u64)> {
        self.trace
            .iter()
            .find(|r| r.stationarity.total.sqrt() <= eps)
            .map(|r| (r.k, r.samples))
    }
}

pub fn run(problem: &ProblemInstance, config: &SolverConfig) -> Result<SolveReport> {
    run_with(problem, config, &InitialPoint::default(), |_| {})
}

/// Runs the solver from `init`, calling `observe` after every iteration.
pub fn run_with<F>(
    problem: &ProblemInstance,
    config: &SolverConfig,
    init: &InitialPoint,
    mut observe: F,
) -> Result<SolveReport>
where
    F: FnMut(&IterationEvent<'_>),
{
    config.validate(problem)?;
    let start = Instant::now();
    let oracle = problem.oracle.as_ref();
    let mut est_rng = trial_rng(config.seed, 0);
    let mut pick_rng = trial_rng(config.seed, 1);
    let mut diag_rng = trial_rng(config.seed, 2);

    let mut x = init
        .x
        .clone()
        .unwrap_or_else(|| Vector::zeros(problem.dim_x()));
    check_len(&x, problem.dim_x(), "initial x")?;
    let mut y = init.y.clone().unwrap_or_else(|| {
        problem
            .block_dims()
            .into_iter()
            .map(Vector::zeros)
            .collect()
    });
    problem.check_blocks(&y)?;

    let first = match config.estimator {
        EstimatorKind::Minibatch => {
            minibatch_step(oracle, &x, &config.plan, config.mode, 0, &mut est_rng)?
        }
        EstimatorKind::Spider => {
            spider_refresh(oracle, &x, &config.plan, config.mode, 0, &mut est_rng)?
        }
    };
    let mut z = match &init.z {
        Some(z) => z.clone(),
        None => least_squares_multiplier(&problem.a, &first.grad)?,
    };
    check_len(&z, problem.dim_p(), "initial z")?;

    let sp = &problem.spectral;
    let (g_min, g_max) = config.g_bounds(sp);
    debug_assert!(g_min >= 1.0 - 1e-9);
    let rs = config.rho * sp.sigma_min_a;
    let coef_step = 3.0 * g_max * g_max / (rs * config.eta * config.eta)
        + 9.0 * config.profile.lip_f.powi(2) / rs;
    let coef_epoch = 2.0 * config.drift_constant() / rs;

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let (stat0, lag0) = evaluate(problem, config, &x, &y, &z, &mut diag_rng)?;
    trace.push(TraceRecord {
        k: 0,
        samples: 0,
        primal_residual: stat0.feas.sqrt(),
        stationarity: stat0,
        aug_lagrangian: lag0,
        potential: lag0,
        dual_step_norm: 0.0,
        dx_sq: 0.0,
        dy_sq: 0.0,
    });

    let mut estimate = first;
    let mut x_prev = x.clone();
    let mut chosen = (x.clone(), y.clone(), z.clone(), 0usize);
    let mut epoch_sum = 0.0;
    for k in 0..config.iterations {
        if k > 0 {
            let used = estimate.samples_used;
            estimate = match config.estimator {
                EstimatorKind::Minibatch => {
                    minibatch_step(oracle, &x, &config.plan, config.mode, used, &mut est_rng)?
                }
                EstimatorKind::Spider if k % config.plan.epoch == 0 => {
                    spider_refresh(oracle, &x, &config.plan, config.mode, used, &mut est_rng)?
                }
                EstimatorKind::Spider => spider_recurse(
                    oracle,
                    &estimate,
                    &x,
                    &x_prev,
                    &config.plan,
                    config.mode,
                    &mut est_rng,
                )?,
            };
        }

        let mut res = problem.residual(&x, &y);
        let y_old = y.clone();
        for j in 0..problem.num_blocks() {
            let shifted = &res - &z / config.rho;
            let yj = y_block_from_residual(problem, config, &y, j, &shifted)?;
            res.gemv(1.0, &problem.b[j], &(&yj - &y[j]), 1.0);
            y[j] = yj;
        }
        let x_new = x_from_residual(problem, config, &x, &estimate.grad, &res, &z);
        let res_new = problem.residual(&x_new, &y);
        let z_new = &z - &res_new * config.rho;

        let dx_sq = (&x_new - &x).norm_squared();
        let dy_sq: f64 = y
            .iter()
            .zip(&y_old)
            .map(|(a, b)| (a - b).norm_squared())
            .sum();
        let dual_step_norm = (&z_new - &z).norm();
        let z_old = std::mem::replace(&mut z, z_new);
        x_prev = std::mem::replace(&mut x, x_new);
        let kk = k + 1;

        // Σ_{i=(n−1)q}^{kk−1} ‖x^{i+1} − x^i‖² with n = ⌈kk/q⌉
        if config.estimator == EstimatorKind::Spider {
            let q = config.plan.epoch;
            if (kk - 1) % q == 0 {
                epoch_sum = 0.0;
            }
            epoch_sum += dx_sq;
        }

        let (stat, lag) = evaluate(problem, config, &x, &y, &z, &mut diag_rng)?;
        let record = TraceRecord {
            k: kk,
            samples: estimate.samples_used,
            primal_residual: res_new.norm(),
            stationarity: stat,
            aug_lagrangian: lag,
            potential: potential_value(lag, dx_sq, epoch_sum, coef_step, coef_epoch),
            dual_step_norm,
            dx_sq,
            dy_sq,
        };
        observe(&IterationEvent {
            k,
            x_prev: &x_prev,
            y_prev: &y_old,
            z_prev: &z_old,
            x: &x,
            y: &y,
            z: &z,
            estimate: &estimate,
            record: &record,
        });
        let stop = config
            .stop_at
            .is_some_and(|t| record.stationarity.total.sqrt() <= t);
        trace.push(record);

        if pick_rng.random_range(0..kk) == 0 {
            chosen = (x.clone(), y.clone(), z.clone(), kk);
        }
        if stop {
            break;
        }
    }

    let last = IterateState {
        x: x.clone(),
        y: y.clone(),
        z: z.clone(),
        x_prev,
        k: trace.len() - 1,
    };
    let (cx, cy, cz, idx) = chosen;
    Ok(SolveReport {
        x: cx,
        y: cy,
        z: cz,
        output_index: idx,
        total_samples: estimate.samples_used,
        trace,
        wall_time: start.elapsed(),
        last,
        descent_constants: config.descent_constants(sp),
    })
}

fn evaluate<R: Rng + ?Sized>(
    problem: &ProblemInstance,
    config: &SolverConfig,
    x: &Vector,
    y: &[Vector],
    z: &Vector,
    rng: &mut R,
) -> Result<(StationarityTriple, f64)> {
    let (stat, f_value) = stationarity_for_trace(problem, x, y, z, rng)?;
    let lag = augmented_lagrangian_value(problem, f_value, x, y, z, config.rho);
    Ok((stat, lag))
}
