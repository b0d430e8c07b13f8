//! Seeded experiment runs and their CSV outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::diagnostics::TraceRecord;
use crate::error::{Error, Result};
use crate::estimator::{trial_rng, EstimatorKind};
use crate::generators::generate_instance;
use crate::linalg::Vector;
use crate::problem::{estimate_profile, Mode, ProblemInstance, SmoothnessProfile};
use crate::solver::{calibrate, run, SolveReport, SolverConfig, DEFAULT_ITERATIONS};

pub const TRACE_HEADER: [&str; 9] = [
    "k",
    "samples",
    "primal_residual",
    "stat_x",
    "stat_y",
    "stat_z",
    "stat_total",
    "aug_lagrangian",
    "potential",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "seed",
    "estimator",
    "mode",
    "epsilon",
    "samples_to_eps",
    "iterations_to_eps",
    "final_stat_total",
    "total_samples",
];

pub const COMPARE_HEADER: [&str; 7] = [
    "estimator",
    "mode",
    "epsilon",
    "median_samples_to_eps",
    "reached",
    "seeds",
    "fitted_exponent",
];

const PROFILE_STREAM: u64 = 3;

/// Outcome of one calibrated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub seed: u64,
    pub estimator: EstimatorKind,
    pub mode: Mode,
    pub epsilon: f64,
    /// Samples consumed when `sqrt(stationarity.total)` first reached `epsilon`.
    pub samples_to_eps: Option<u64>,
    pub iterations_to_eps: Option<usize>,
    pub final_stat_total: f64,
    pub total_samples: u64,
}

/// Per-`(estimator, ε)` aggregate over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub estimator: EstimatorKind,
    pub mode: Mode,
    pub epsilon: f64,
    /// Median over seeds, with unreached runs counted as infinite.
    pub median_samples_to_eps: Option<f64>,
    pub reached: usize,
    pub seeds: usize,
    /// Slope of `ln(median samples)` against `ln(1/ε)` over the tolerance grid.
    pub fitted_exponent: Option<f64>,
}

/// Instance for `seed`: the configured generator with its seed replaced.
pub fn instance_for_seed(config: &ExperimentConfig, seed: u64) -> Result<ProblemInstance> {
    let mut spec = config.generator.clone();
    spec.seed = seed;
    generate_instance(&spec)
}

fn resolve_mode(config: &ExperimentConfig, problem: &ProblemInstance) -> Mode {
    config.mode.unwrap_or_else(|| problem.mode())
}

fn profile_for(
    config: &ExperimentConfig,
    problem: &ProblemInstance,
    seed: u64,
) -> Result<SmoothnessProfile> {
    match config.solver.profile_probes {
        Some(n) => {
            let mut rng = trial_rng(seed, PROFILE_STREAM);
            let probes: Vec<Vector> = (0..n)
                .map(|_| Vector::from_fn(problem.dim_x(), |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            estimate_profile(problem.oracle.as_ref(), &probes, &mut rng)
        }
        None => problem.profile.ok_or_else(|| {
            Error::ConfigError("instance carries no profile; set profile_probes".into())
        }),
    }
}

/// Calibrated solver configuration for one run, with overrides applied.
pub fn solver_config(
    config: &ExperimentConfig,
    problem: &ProblemInstance,
    seed: u64,
    estimator: EstimatorKind,
    epsilon: f64,
) -> Result<SolverConfig> {
    let profile = profile_for(config, problem, seed)?;
    let o = &config.solver;
    let mode = resolve_mode(config, problem);
    let mut cfg = calibrate(
        problem, &profile, estimator, mode, o.alpha, epsilon, o.epoch,
    )?;
    if let Some(rho) = o.rho {
        cfg.rho = rho;
    }
    if let Some(eta) = o.eta {
        cfg.eta = eta;
    }
    if o.rho.is_some() || o.eta.is_some() {
        let sp = &problem.spectral;
        cfg.r = cfg.rho * cfg.eta * sp.sigma_max_a + 1.0;
        cfg.tau = sp.sigma_max_b.iter().map(|sb| cfg.rho * sb + 1.0).collect();
    }
    if let Some(r) = o.r {
        cfg.r = r;
    }
    cfg.iterations = o.iterations.unwrap_or(DEFAULT_ITERATIONS);
    cfg.seed = seed;
    cfg.stop_at = o.stop_at_target.then_some(epsilon);
    cfg.validate(problem)?;
    Ok(cfg)
}

/// Runs a single `(seed, estimator, ε)` combination.
pub fn run_single(
    config: &ExperimentConfig,
    seed: u64,
    estimator: EstimatorKind,
    epsilon: f64,
) -> Result<(SolverConfig, SolveReport)> {
    let problem = instance_for_seed(config, seed)?;
    let cfg = solver_config(config, &problem, seed, estimator, epsilon)?;
    let report = run(&problem, &cfg)?;
    Ok((cfg, report))
}

pub fn summarize(seed: u64, cfg: &SolverConfig, epsilon: f64, report: &SolveReport) -> SummaryRow {
    let hit = report.samples_to(epsilon);
    SummaryRow {
        seed,
        estimator: cfg.estimator,
        mode: cfg.mode,
        epsilon,
        samples_to_eps: hit.map(|h| h.1),
        iterations_to_eps: hit.map(|h| h.0),
        final_stat_total: report
            .trace
            .last()
            .map_or(f64::NAN, |r| r.stationarity.total),
        total_samples: report.total_samples,
    }
}

pub fn trace_file_name(estimator: EstimatorKind, seed: u64, eps_index: usize) -> String {
    format!("trace_{}_seed{}_eps{}.csv", estimator, seed, eps_index)
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        let s = &r.stationarity;
        w.write_record([
            r.k.to_string(),
            r.samples.to_string(),
            r.primal_residual.to_string(),
            s.grad.to_string(),
            s.subdiff.to_string(),
            s.feas.to_string(),
            s.total.to_string(),
            r.aug_lagrangian.to_string(),
            r.potential.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.estimator.to_string(),
            r.mode.to_string(),
            r.epsilon.to_string(),
            opt(r.samples_to_eps),
            opt(r.iterations_to_eps),
            r.final_stat_total.to_string(),
            r.total_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_compare(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COMPARE_HEADER)?;
    for r in rows {
        w.write_record([
            r.estimator.to_string(),
            r.mode.to_string(),
            r.epsilon.to_string(),
            opt(r.median_samples_to_eps),
            r.reached.to_string(),
            r.seeds.to_string(),
            opt(r.fitted_exponent),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub trace_paths: Vec<PathBuf>,
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<(SummaryRow, PathBuf)>> {
    let problem = instance_for_seed(config, seed)?;
    let mut out = Vec::new();
    for &estimator in &config.estimators {
        for (i, &eps) in config.epsilons.iter().enumerate() {
            let cfg = solver_config(config, &problem, seed, estimator, eps)?;
            let report = run(&problem, &cfg)?;
            let path = config.output.join(trace_file_name(estimator, seed, i));
            write_trace(&path, &report.trace)?;
            out.push((summarize(seed, &cfg, eps, &report), path));
        }
    }
    Ok(out)
}

/// Runs every `(seed, estimator, ε)` combination, writing one trace per run
/// and `summary.csv`. Seeds run in parallel; rows come back in config order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    fs::create_dir_all(&config.output)?;
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect::<Result<Vec<_>>>()?;
    let (rows, trace_paths): (Vec<_>, Vec<_>) = per_seed.into_iter().flatten().unzip();
    let summary_path = config.output.join("summary.csv");
    write_summary(&summary_path, &rows)?;
    Ok(ExperimentOutput {
        rows,
        summary_path,
        trace_paths,
    })
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let m = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    m.is_finite().then_some(m)
}

/// Least-squares slope of `ln y` against `ln(1/ε)`; needs two distinct tolerances.
pub fn fit_exponent(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, s)| *e > 0.0 && *s > 0.0)
        .map(|&(e, s)| (-e.ln(), s.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Medians per `(estimator, ε)` with a scaling-fit exponent per estimator.
pub fn aggregate(
    rows: &[SummaryRow],
    estimators: &[EstimatorKind],
    epsilons: &[f64],
) -> Vec<CompareRow> {
    let mut out = Vec::new();
    for &estimator in estimators {
        let mut block: Vec<CompareRow> = epsilons
            .iter()
            .map(|&epsilon| {
                let runs: Vec<&SummaryRow> = rows
                    .iter()
                    .filter(|r| r.estimator == estimator && r.epsilon == epsilon)
                    .collect();
                let samples = runs
                    .iter()
                    .map(|r| r.samples_to_eps.map_or(f64::INFINITY, |s| s as f64))
                    .collect();
                CompareRow {
                    estimator,
                    mode: runs.first().map_or(Mode::Online, |r| r.mode),
                    epsilon,
                    median_samples_to_eps: median(samples),
                    reached: runs.iter().filter(|r| r.samples_to_eps.is_some()).count(),
                    seeds: runs.len(),
                    fitted_exponent: None,
                }
            })
            .collect();
        let points: Vec<(f64, f64)> = block
            .iter()
            .filter_map(|r| r.median_samples_to_eps.map(|m| (r.epsilon, m)))
            .collect();
        let slope = fit_exponent(&points);
        for r in &mut block {
            r.fitted_exponent = slope;
        }
        out.extend(block);
    }
    out
}

/// Runs the experiment and writes `compare.csv` next to the summary.
pub fn compare_estimators(
    config: &ExperimentConfig,
) -> Result<(ExperimentOutput, Vec<CompareRow>)> {
    if config.estimators.len() < 2 {
        return Err(Error::ConfigError(
            "comparison needs at least two estimators".into(),
        ));
    }
    let output = run_experiment(config)?;
    let table = aggregate(&output.rows, &config.estimators, &config.epsilons);
    write_compare(&config.output.join("compare.csv"), &table)?;
    Ok((output, table))
}
