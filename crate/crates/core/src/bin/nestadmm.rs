use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nestadmm::checks::check_instance;
use nestadmm::config::{load_generator_spec, ExperimentConfig, InstanceFile};
use nestadmm::estimator::EstimatorKind;
use nestadmm::experiment::{
    compare_estimators, run_single, summarize, trace_file_name, write_summary, write_trace,
};
use nestadmm::generators::generate_instance;
use nestadmm::problem::Mode;
use nestadmm::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nestadmm",
    version,
    about = "Stochastic nested ADMM experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an instance from a generator spec and write it as TOML.
    Generate(Common),
    /// Run one seed of an experiment config and write its trace CSVs.
    Solve(Common),
    /// Run every seed and estimator of a config and write summary and comparison CSVs.
    Compare(Common),
    /// Run the invariant suite on an instance file.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    #[arg(long)]
    mode: Option<Mode>,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(kind) = self.estimator {
            cfg.estimators = vec![kind];
        }
        if self.mode.is_some() {
            cfg.mode = self.mode;
        }
        Ok(cfg)
    }
}

fn generate(args: &Common) -> Result<()> {
    let mut spec = load_generator_spec(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let inst = generate_instance(&spec)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let path = out.join("instance.toml");
    InstanceFile::from_instance(&inst)?.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn solve(args: &Common) -> Result<()> {
    let cfg = args.experiment()?;
    fs::create_dir_all(&cfg.output)?;
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &kind in &cfg.estimators {
        for (i, &eps) in cfg.epsilons.iter().enumerate() {
            let (solver, report) = run_single(&cfg, seed, kind, eps)?;
            let path = cfg.output.join(trace_file_name(kind, seed, i));
            write_trace(&path, &report.trace)?;
            let row = summarize(seed, &solver, eps, &report);
            println!(
                "{kind} eps={eps}: iterations={} samples={} best stationarity={:.3e} -> {}",
                report.trace.len() - 1,
                report.total_samples,
                report.best_stationarity(),
                path.display()
            );
            rows.push(row);
        }
    }
    write_summary(&cfg.output.join("summary.csv"), &rows)
}

fn compare(args: &Common) -> Result<()> {
    let cfg = args.experiment()?;
    let (output, table) = compare_estimators(&cfg)?;
    for r in &table {
        println!(
            "{} eps={}: median samples {} ({} of {} reached), exponent {}",
            r.estimator,
            r.epsilon,
            r.median_samples_to_eps
                .map_or("-".into(), |m| format!("{m:.0}")),
            r.reached,
            r.seeds,
            r.fitted_exponent.map_or("-".into(), |e| format!("{e:.2}")),
        );
    }
    println!("wrote {}", output.summary_path.display());
    Ok(())
}

fn check(args: &Common) -> Result<()> {
    let file = InstanceFile::load(&args.config)?;
    let problem = file.to_instance()?;
    let outcomes = check_instance(&problem, &file.profile, args.seed.unwrap_or(0))?;
    let mut failed = 0;
    for c in &outcomes {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Error::CheckFailed {
            failed,
            total: outcomes.len(),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Compare(a) => compare(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
