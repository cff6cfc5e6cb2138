//! `mde`: batch front end for penalized minimum-distance experiments.
//!
//! ```text
//! mde simulate --config run.json --out results/
//! mde estimate --config run.json --seed 42 --workers 4
//! mde limit    --config run.json
//! mde compare  --config run.json
//! ```
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a configuration
//! error.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mde_core::montecarlo::{compare_samples, consistency_table, limit_samples, run_estimates};
use mde_core::simulate_sde;
use mde_core::streams::{rng_from_seed, stream_seed, Role};
use rayon::prelude::*;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<mde_core::Error> for CliError {
    fn from(e: mde_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mde", version, about = "Penalized minimum-distance estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate observed paths; writes paths.csv.
    Simulate(Common),
    /// Estimate θ on simulated paths; writes estimates.csv.
    Estimate(Common),
    /// Sample the limit law of the rescaled error; writes limit_samples.csv.
    Limit(Common),
    /// Compare rescaled errors with the limit law; writes report.json.
    Compare(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `out_dir` from the config, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `optimizer.starts`.
    #[arg(long)]
    starts: Option<usize>,
    /// Overrides `optimizer.max_evals`.
    #[arg(long)]
    max_evals: Option<usize>,
    /// Overrides `optimizer.tol`.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides `optimizer.seed`.
    #[arg(long)]
    opt_seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.base_seed = seed;
        }
        let opt = &mut cfg.optimizer;
        opt.starts = self.starts.unwrap_or(opt.starts);
        opt.max_evals = self.max_evals.unwrap_or(opt.max_evals);
        opt.tol = self.tol.unwrap_or(opt.tol);
        opt.seed = self.opt_seed.unwrap_or(opt.seed);
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, out))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        match self.workers {
            Some(0) => return Err(CliError::Config("--workers must be at least 1".into())),
            Some(n) => builder = builder.num_threads(n),
            None => {}
        }
        builder.build().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

fn simulate(args: &Common) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let exp = cfg.experiment(true)?;
    let eps = cfg.single_eps()?;
    let paths = args.pool()?.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_from_seed(stream_seed(cfg.base_seed, 0, r, Role::Path));
                simulate_sde(&exp.model, &cfg.theta_star, eps, &exp.grid, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let path = output::write(&out, "paths.csv", &output::paths_csv(&paths))?;
    println!("wrote {} paths to {}", paths.len(), path.display());
    Ok(())
}

fn estimate(args: &Common) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let exp = cfg.experiment(true)?;
    let records = args.pool()?.install(|| run_estimates(&exp));
    let path = output::write(&out, "estimates.csv", &output::estimates_csv(&records))?;
    println!("wrote {} estimates to {}", records.len(), path.display());
    let table = consistency_table(&exp, &records)?;
    for row in &table.rows {
        println!(
            "eps={} coord={} median|err|={:.6e} ok={} failed={}",
            row.eps, row.coord, row.median_abs_error, row.n_ok, row.n_failed
        );
    }
    Ok(())
}

fn limit(args: &Common) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let exp = cfg.experiment(true)?;
    let draws = args.pool()?.install(|| limit_samples(&exp, cfg.n_limit()))?;
    let path = output::write(&out, "limit_samples.csv", &output::limit_csv(&draws))?;
    println!("wrote {} limit draws to {}", draws.len(), path.display());
    Ok(())
}

fn compare(args: &Common) -> Result<(), CliError> {
    let (cfg, out) = args.load()?;
    let exp = cfg.experiment(false)?;
    cfg.single_eps()?;
    let report = args.pool()?.install(|| {
        let records = run_estimates(&exp);
        let limit = limit_samples(&exp, cfg.n_limit())?;
        compare_samples(&records, &limit, &exp.limit_spec()?)
    })?;
    let path = output::write(&out, "report.json", &output::report_json(&cfg, &report)?)?;
    println!("ks={:?} wasserstein={:?}", report.ks, report.wasserstein);
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Limit(a) => limit(a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mde: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
