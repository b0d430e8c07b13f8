//! Nested gradient estimators: plain mini-batch sampling and the SPIDER
//! recursion with periodic refresh.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::problem::{
    check_len, exact_nested_gradient, Batch, CompositionOracle, Mode, Population, SmoothnessProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Minibatch,
    Spider,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Minibatch => "minibatch",
            EstimatorKind::Spider => "spider",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minibatch" => Ok(EstimatorKind::Minibatch),
            "spider" => Ok(EstimatorKind::Spider),
            _ => Err(Error::ConfigError(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Sample counts for the three estimated quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSizes {
    /// Inner function values.
    pub value: usize,
    /// Inner Jacobians.
    pub jacobian: usize,
    /// Outer gradients.
    pub gradient: usize,
}

impl BatchSizes {
    pub fn uniform(n: usize) -> Self {
        Self {
            value: n,
            jacobian: n,
            gradient: n,
        }
    }

    pub fn total(&self) -> u64 {
        (self.value + self.jacobian + self.gradient) as u64
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.value == 0 || self.jacobian == 0 || self.gradient == 0 {
            return Err(Error::ConfigError(format!(
                "{what} batch sizes must be positive"
            )));
        }
        Ok(())
    }
}

/// Batch sizes and epoch length of an estimator.
///
/// `step` is used by every mini-batch step and every SPIDER recursion;
/// `refresh` by the SPIDER refresh in online mode (finite-sum refreshes use
/// the full populations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub refresh: BatchSizes,
    pub step: BatchSizes,
    pub epoch: usize,
}

impl BatchPlan {
    pub fn minibatch(step: BatchSizes) -> Self {
        Self {
            refresh: step,
            step,
            epoch: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.refresh.validate("refresh")?;
        self.step.validate("step")?;
        if self.epoch == 0 {
            return Err(Error::ConfigError("epoch length must be at least 1".into()));
        }
        Ok(())
    }

    /// Samples drawn by one step of this plan on `oracle`, matching the
    /// accounting of the estimator functions.
    pub fn samples_for_step(
        &self,
        oracle: &dyn CompositionOracle,
        kind: EstimatorKind,
        mode: Mode,
        k: usize,
    ) -> u64 {
        let refresh = kind == EstimatorKind::Spider && k.is_multiple_of(self.epoch);
        let (inner, outer) = (oracle.inner_population(), oracle.outer_population());
        if refresh {
            match mode {
                Mode::FiniteSum => {
                    let n1 = finite_len(inner) as u64;
                    2 * n1 + finite_len(outer) as u64
                }
                Mode::Online => self.refresh.total(),
            }
        } else {
            let s = &self.step;
            (effective(inner, s.value, mode)
                + effective(inner, s.jacobian, mode)
                + effective(outer, s.gradient, mode)) as u64
        }
    }
}

fn finite_len(pop: Population) -> usize {
    match pop {
        Population::Finite(n) => n,
        Population::Stream => 0,
    }
}

fn effective(pop: Population, size: usize, mode: Mode) -> usize {
    match (pop, mode) {
        (Population::Finite(n), Mode::FiniteSum) => size.min(n),
        _ => size,
    }
}

/// Draws `size` indices uniformly with replacement. In finite-sum mode a
/// request covering the whole population is served by the full set.
pub fn draw_batch<R: Rng + ?Sized>(
    pop: Population,
    size: usize,
    mode: Mode,
    rng: &mut R,
) -> Result<Batch> {
    if size == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(match pop {
        Population::Finite(0) => return Err(Error::EmptyBatch),
        Population::Finite(n) if mode == Mode::FiniteSum && size >= n => Batch::Full(n),
        Population::Finite(n) => {
            Batch::Sample((0..size).map(|_| rng.random_range(0..n as u64)).collect())
        }
        Population::Stream => Batch::Sample((0..size).map(|_| rng.random::<u64>()).collect()),
    })
}

fn full_batch(pop: Population) -> Result<Batch> {
    match pop {
        Population::Finite(0) => Err(Error::EmptyBatch),
        Population::Finite(n) => Ok(Batch::Full(n)),
        Population::Stream => Err(Error::UnsupportedMode),
    }
}

/// Running estimates of the inner value, inner Jacobian, and outer gradient,
/// plus the assembled gradient `grad = jacobianᵀ · outer_grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub inner: Vector,
    pub jacobian: Matrix,
    pub outer_grad: Vector,
    pub grad: Vector,
    /// Iterations since the last refresh.
    pub k_in_epoch: usize,
    /// Cumulative component evaluations.
    pub samples_used: u64,
}

impl EstimatorState {
    fn assemble(
        inner: Vector,
        jacobian: Matrix,
        outer_grad: Vector,
        k_in_epoch: usize,
        samples_used: u64,
    ) -> Self {
        let grad = jacobian.tr_mul(&outer_grad);
        Self {
            inner,
            jacobian,
            outer_grad,
            grad,
            k_in_epoch,
            samples_used,
        }
    }
}

fn estimate(
    o: &dyn CompositionOracle,
    x: &Vector,
    value: &Batch,
    jacobian: &Batch,
    gradient: &Batch,
) -> (Vector, Matrix, Vector, u64) {
    let y = o.mean_inner_value(value, x);
    let z1 = o.mean_inner_jacobian(jacobian, x);
    let z2 = o.mean_outer_gradient(gradient, &y);
    let n = (value.len() + jacobian.len() + gradient.len()) as u64;
    (y, z1, z2, n)
}

/// One mini-batch estimate at `x`, starting the sample count at `samples_before`.
pub fn minibatch_step<R: Rng + ?Sized>(
    o: &dyn CompositionOracle,
    x: &Vector,
    plan: &BatchPlan,
    mode: Mode,
    samples_before: u64,
    rng: &mut R,
) -> Result<EstimatorState> {
    plan.step.validate("step")?;
    check_len(x, o.dim_x(), "x")?;
    let s = draw_batch(o.inner_population(), plan.step.value, mode, rng)?;
    let b1 = draw_batch(o.inner_population(), plan.step.jacobian, mode, rng)?;
    let b2 = draw_batch(o.outer_population(), plan.step.gradient, mode, rng)?;
    let (y, z1, z2, n) = estimate(o, x, &s, &b1, &b2);
    Ok(EstimatorState::assemble(y, z1, z2, 0, samples_before + n))
}

/// SPIDER epoch start: full populations in finite-sum mode, the refresh
/// batch sizes in online mode.
pub fn spider_refresh<R: Rng + ?Sized>(
    o: &dyn CompositionOracle,
    x: &Vector,
    plan: &BatchPlan,
    mode: Mode,
    samples_before: u64,
    rng: &mut R,
) -> Result<EstimatorState> {
    check_len(x, o.dim_x(), "x")?;
    let (s, b1, b2) = match mode {
        Mode::FiniteSum => (
            full_batch(o.inner_population())?,
            full_batch(o.inner_population())?,
            full_batch(o.outer_population())?,
        ),
        Mode::Online => {
            plan.refresh.validate("refresh")?;
            (
                draw_batch(o.inner_population(), plan.refresh.value, mode, rng)?,
                draw_batch(o.inner_population(), plan.refresh.jacobian, mode, rng)?,
                draw_batch(o.outer_population(), plan.refresh.gradient, mode, rng)?,
            )
        }
    };
    let (y, z1, z2, n) = estimate(o, x, &s, &b1, &b2);
    Ok(EstimatorState::assemble(y, z1, z2, 0, samples_before + n))
}

/// SPIDER correction along the step `x_prev → x_new`, one batch per quantity
/// shared by both evaluation points.
pub fn spider_recurse<R: Rng + ?Sized>(
    o: &dyn CompositionOracle,
    prev: &EstimatorState,
    x_new: &Vector,
    x_prev: &Vector,
    plan: &BatchPlan,
    mode: Mode,
    rng: &mut R,
) -> Result<EstimatorState> {
    if prev.k_in_epoch + 1 >= plan.epoch {
        return Err(Error::EpochBoundary {
            k_in_epoch: prev.k_in_epoch,
            q: plan.epoch,
        });
    }
    plan.step.validate("step")?;
    check_len(x_new, o.dim_x(), "x_new")?;
    check_len(x_prev, o.dim_x(), "x_prev")?;
    let s = draw_batch(o.inner_population(), plan.step.value, mode, rng)?;
    let b1 = draw_batch(o.inner_population(), plan.step.jacobian, mode, rng)?;
    let b2 = draw_batch(o.outer_population(), plan.step.gradient, mode, rng)?;

    let y = &prev.inner + o.mean_inner_value(&s, x_new) - o.mean_inner_value(&s, x_prev);
    let z1 =
        &prev.jacobian + o.mean_inner_jacobian(&b1, x_new) - o.mean_inner_jacobian(&b1, x_prev);
    let z2 =
        &prev.outer_grad + o.mean_outer_gradient(&b2, &y) - o.mean_outer_gradient(&b2, &prev.inner);
    let n = (s.len() + b1.len() + b2.len()) as u64;
    Ok(EstimatorState::assemble(
        y,
        z1,
        z2,
        prev.k_in_epoch + 1,
        prev.samples_used + n,
    ))
}

/// Upper bound on `E‖grad − F'(x)‖²` for one mini-batch estimate.
pub fn variance_bound_minibatch(p: &SmoothnessProfile, step: &BatchSizes) -> f64 {
    let l1sq = p.ell1 * p.ell1;
    27.0 * l1sq * p.sigma2 * p.sigma2 / step.gradient as f64
        + 27.0 * l1sq * p.lip2 * p.lip2 * p.delta * p.delta / step.value as f64
        + 3.0 * p.ell2 * p.ell2 * p.sigma1 * p.sigma1 / step.jacobian as f64
}

/// Constants of the SPIDER error bound
/// `E‖grad_k − F'(x_k)‖² ≤ refresh + drift · Σ‖Δx‖²` over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiderBound {
    pub refresh: f64,
    pub drift: f64,
}

pub fn variance_bound_spider(p: &SmoothnessProfile, plan: &BatchPlan, mode: Mode) -> SpiderBound {
    let l1sq = p.ell1 * p.ell1;
    let l2sq = p.ell2 * p.ell2;
    let refresh = match mode {
        Mode::FiniteSum => 0.0,
        Mode::Online => {
            let r = &plan.refresh;
            27.0 * l1sq * p.sigma2 * p.sigma2 / r.gradient as f64
                + 27.0 * l1sq * p.delta * p.delta / r.value as f64
                + 3.0 * l2sq * p.sigma1 * p.sigma1 / r.jacobian as f64
        }
    };
    let s = &plan.step;
    let drift = 27.0 * l1sq * l1sq * p.lip2 * p.lip2 / s.gradient as f64
        + 27.0 * l1sq * l1sq / s.value as f64
        + 3.0 * l2sq * p.lip1 * p.lip1 / s.jacobian as f64;
    SpiderBound { refresh, drift }
}

/// Runs an estimator along a fixed path of points.
///
/// The mini-batch estimator samples afresh at each point; SPIDER refreshes at
/// the first point and every `plan.epoch` points, recursing in between.
pub fn estimate_along_path<R: Rng + ?Sized>(
    o: &dyn CompositionOracle,
    path: &[Vector],
    kind: EstimatorKind,
    plan: &BatchPlan,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<EstimatorState>> {
    let mut out: Vec<EstimatorState> = Vec::with_capacity(path.len());
    for (k, x) in path.iter().enumerate() {
        let used = out.last().map_or(0, |s| s.samples_used);
        let next = match kind {
            EstimatorKind::Minibatch => minibatch_step(o, x, plan, mode, used, rng)?,
            EstimatorKind::Spider if k % plan.epoch == 0 => {
                spider_refresh(o, x, plan, mode, used, rng)?
            }
            EstimatorKind::Spider => {
                let prev = out.last().expect("recursion follows a refresh");
                spider_recurse(o, prev, x, &path[k - 1], plan, mode, rng)?
            }
        };
        out.push(next);
    }
    Ok(out)
}

/// Monte-Carlo mean of `‖grad − F'(x)‖²` at each path point over `trials`
/// independent estimator runs. Trial `t` uses an RNG seeded from `(seed, t)`.
pub fn empirical_mse(
    o: &dyn CompositionOracle,
    path: &[Vector],
    kind: EstimatorKind,
    plan: &BatchPlan,
    mode: Mode,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(Error::ConfigError("trials must be at least 1".into()));
    }
    let exact = path
        .iter()
        .map(|x| exact_nested_gradient(o, x))
        .collect::<Result<Vec<_>>>()?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let states = estimate_along_path(o, path, kind, plan, mode, &mut rng)?;
            Ok(states
                .iter()
                .zip(&exact)
                .map(|(s, g)| (&s.grad - g).norm_squared())
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; path.len()];
    for errs in &per_trial {
        for (m, e) in mean.iter_mut().zip(errs) {
            *m += e;
        }
    }
    Ok(mean.into_iter().map(|m| m / trials as f64).collect())
}

pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
