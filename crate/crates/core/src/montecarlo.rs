//! Replicated experiments linking finite-ε estimates to the asymptotic
//! claims: consistency, convergence of the rescaled error to `argmin V`, and
//! exact-zero recovery of null coordinates.
//!
//! Replication `r` at noise index `e` draws its path from the stream
//! `(base_seed, e, r, Path)` and seeds its optimizer from
//! `(base_seed, e, r, Optimizer)`; limit draws use `(base_seed, 0, 0, Limit)`.
//! Replications run in parallel on the current rayon pool and are collected in
//! canonical `(eps index, rep)` order, so results do not depend on the worker
//! count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::simulate_sde;
use crate::error::{Error, Result};
use crate::estimator::{minimize_contrast, LambdaRule, OptimizerConfig, PenaltyConfig};
use crate::limit_law::{fisher_info, sample_limit_distribution, LimitLawSpec, Regime};
use crate::model::{builtin, build_time_grid, Measure, ModelSpec, TimeGrid};
use crate::stats::{ks_two_sample, mean, median, quantile, variance, wasserstein1};
use crate::streams::{rng_from_seed, stream_seed, Role};

/// Fraction of failed replications above which an experiment is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of a built-in model.
    pub model: String,
    pub theta_star: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub reps: usize,
    pub gamma: f64,
    pub lambda_rule: LambdaRule,
    pub n_steps: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub paper_literal_gamma1: bool,
}

/// A validated configuration with its model, grid and measure resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: ModelSpec,
    pub grid: TimeGrid,
    pub mu: Measure,
}

impl Experiment {
    /// Validates `config`; `eps = 0` is accepted only when `allow_zero_eps`.
    pub fn new(config: &ExperimentConfig, allow_zero_eps: bool) -> Result<Self> {
        let model = builtin(&config.model)?.spec;
        if config.theta_star.len() != model.dim() {
            return Err(Error::invalid(format!(
                "theta_star has {} coordinates, model {} has {}",
                config.theta_star.len(),
                config.model,
                model.dim()
            )));
        }
        if !model.theta_box().contains_interior(&config.theta_star) {
            return Err(Error::invalid(format!(
                "theta_star {:?} must lie strictly inside the parameter box {:?}",
                config.theta_star,
                model.theta_box()
            )));
        }
        if config.eps_list.is_empty() {
            return Err(Error::invalid("eps_list must not be empty"));
        }
        for (i, &e) in config.eps_list.iter().enumerate() {
            let ok = e.is_finite() && (e > 0.0 || (allow_zero_eps && e == 0.0));
            if !ok {
                return Err(Error::invalid(format!("eps_list[{i}] = {e} is not a valid noise level")));
            }
            if config.eps_list[..i].contains(&e) {
                return Err(Error::invalid(format!("eps_list contains {e} twice")));
            }
        }
        if config.reps == 0 {
            return Err(Error::invalid("reps must be at least 1"));
        }
        PenaltyConfig::new(config.gamma, 0.0)?;
        config.lambda_rule.validate()?;
        config.optimizer.validate()?;
        let grid = build_time_grid(model.horizon(), config.n_steps)?;
        Ok(Experiment {
            config: config.clone(),
            mu: Measure::lebesgue(&grid),
            model,
            grid,
        })
    }

    pub fn penalty_at(&self, eps: f64) -> PenaltyConfig {
        PenaltyConfig {
            gamma: self.config.gamma,
            lambda: self.config.lambda_rule.lambda(eps, self.config.gamma),
        }
    }

    /// Limit-law specification at θ* with `λ0` taken from the λ rule.
    pub fn limit_spec(&self) -> Result<LimitLawSpec> {
        let info = fisher_info(&self.model, &self.config.theta_star, &self.mu)?;
        Ok(LimitLawSpec::new(
            self.config.theta_star.clone(),
            info,
            self.config.gamma,
            self.config.lambda_rule.lambda0(),
        )?
        .with_paper_literal_gamma1(self.config.paper_literal_gamma1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub eps: f64,
    pub eps_index: usize,
    pub rep: usize,
    pub theta_hat: Vec<f64>,
    /// `(θ̂ − θ*)/ε`; NaN when `ε = 0`.
    pub rescaled_error: Vec<f64>,
    pub zero_pattern: Vec<bool>,
    pub contrast: f64,
    pub converged: bool,
    /// Why the replication failed, if it did.
    pub failure: Option<String>,
    #[serde(skip)]
    pub wall_time: f64,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

fn one_rep(exp: &Experiment, eps_index: usize, rep: usize) -> RepRecord {
    let started = Instant::now();
    let cfg = &exp.config;
    let eps = cfg.eps_list[eps_index];
    let p = exp.model.dim();
    let outcome = (|| {
        let mut rng = rng_from_seed(stream_seed(cfg.base_seed, eps_index, rep, Role::Path));
        let path = simulate_sde(&exp.model, &cfg.theta_star, eps, &exp.grid, &mut rng)?;
        let opt = OptimizerConfig {
            seed: stream_seed(cfg.base_seed, eps_index, rep, Role::Optimizer),
            ..cfg.optimizer
        };
        minimize_contrast(&path, &exp.model, &exp.penalty_at(eps), &exp.mu, &opt)
    })();
    let wall_time = started.elapsed().as_secs_f64();
    match outcome {
        Ok(est) => RepRecord {
            eps,
            eps_index,
            rep,
            rescaled_error: est
                .theta_hat
                .iter()
                .zip(&cfg.theta_star)
                .map(|(h, t)| (h - t) / eps)
                .map(|v| if eps == 0.0 { f64::NAN } else { v })
                .collect(),
            theta_hat: est.theta_hat,
            zero_pattern: est.zero_pattern,
            contrast: est.contrast_value,
            converged: est.converged,
            failure: None,
            wall_time,
        },
        Err(e) => RepRecord {
            eps,
            eps_index,
            rep,
            theta_hat: vec![f64::NAN; p],
            rescaled_error: vec![f64::NAN; p],
            zero_pattern: vec![false; p],
            contrast: f64::NAN,
            converged: false,
            failure: Some(e.to_string()),
            wall_time,
        },
    }
}

/// Every `(ε, rep)` estimation, in canonical order. Failed replications are
/// kept as flagged records.
pub fn run_estimates(exp: &Experiment) -> Vec<RepRecord> {
    let jobs: Vec<(usize, usize)> = (0..exp.config.eps_list.len())
        .flat_map(|e| (0..exp.config.reps).map(move |r| (e, r)))
        .collect();
    jobs.par_iter().map(|&(e, r)| one_rep(exp, e, r)).collect()
}

fn check_failures(records: &[RepRecord]) -> Result<()> {
    let failed = records.iter().filter(|r| r.failed()).count();
    if failed as f64 > MAX_FAILURE_FRACTION * records.len() as f64 {
        return Err(Error::ExperimentFailed {
            failed,
            total: records.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub eps: f64,
    pub coord: usize,
    pub median_abs_error: f64,
    pub p90_abs_error: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencyTable {
    pub rows: Vec<ConsistencyRow>,
}

impl ConsistencyTable {
    /// Median absolute errors of one coordinate, in `eps_list` order.
    pub fn medians(&self, coord: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.coord == coord)
            .map(|r| r.median_abs_error)
            .collect()
    }
}

/// Absolute-error quantiles of `θ̂` per ε and coordinate.
pub fn run_consistency(config: &ExperimentConfig) -> Result<ConsistencyTable> {
    let exp = Experiment::new(config, false)?;
    let records = run_estimates(&exp);
    consistency_table(&exp, &records)
}

pub fn consistency_table(exp: &Experiment, records: &[RepRecord]) -> Result<ConsistencyTable> {
    check_failures(records)?;
    let mut rows = Vec::new();
    for (e, &eps) in exp.config.eps_list.iter().enumerate() {
        let at_eps: Vec<&RepRecord> = records.iter().filter(|r| r.eps_index == e).collect();
        let ok: Vec<&&RepRecord> = at_eps.iter().filter(|r| !r.failed()).collect();
        for (j, t) in exp.config.theta_star.iter().enumerate() {
            let errs: Vec<f64> = ok.iter().map(|r| (r.theta_hat[j] - t).abs()).collect();
            rows.push(ConsistencyRow {
                eps,
                coord: j,
                median_abs_error: median(&errs),
                p90_abs_error: quantile(&errs, 0.9),
                n_ok: ok.len(),
                n_failed: at_eps.len() - ok.len(),
            });
        }
    }
    Ok(ConsistencyTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub eps: f64,
    pub gamma: f64,
    /// Penalty level of the limit objective.
    pub lambda0: f64,
    pub regime: String,
    pub n_reps: usize,
    pub n_failed: usize,
    pub n_limit: usize,
    /// Per-coordinate two-sample KS statistic.
    pub ks: Vec<f64>,
    /// Per-coordinate 1-Wasserstein distance.
    pub wasserstein: Vec<f64>,
    /// Fraction of estimator replications with an exact zero, per coordinate.
    pub zero_fraction: Vec<f64>,
    pub limit_zero_fraction: Vec<f64>,
    pub estimator_mean: Vec<f64>,
    pub estimator_var: Vec<f64>,
    pub limit_mean: Vec<f64>,
    pub limit_var: Vec<f64>,
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Smooth => "gamma>1",
        Regime::Lasso => "gamma=1",
        Regime::Bridge => "gamma<1",
    }
}

fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

fn zero_fraction(xs: &[f64]) -> f64 {
    xs.iter().filter(|v| **v == 0.0).count() as f64 / xs.len() as f64
}

/// Compares estimator records against limit samples coordinate by coordinate.
pub fn compare_samples(
    records: &[RepRecord],
    limit: &[Vec<f64>],
    spec: &LimitLawSpec,
) -> Result<ComparisonReport> {
    check_failures(records)?;
    let ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed()).collect();
    if ok.is_empty() || limit.is_empty() {
        return Err(Error::invalid("need at least one estimate and one limit draw"));
    }
    let eps = ok[0].eps;
    let p = spec.dim();
    let rescaled: Vec<Vec<f64>> = ok.iter().map(|r| r.rescaled_error.clone()).collect();
    let mut report = ComparisonReport {
        eps,
        gamma: spec.gamma,
        lambda0: spec.lambda0,
        regime: regime_name(spec.regime()).to_string(),
        n_reps: records.len(),
        n_failed: records.len() - ok.len(),
        n_limit: limit.len(),
        ks: Vec::with_capacity(p),
        wasserstein: Vec::with_capacity(p),
        zero_fraction: Vec::with_capacity(p),
        limit_zero_fraction: Vec::with_capacity(p),
        estimator_mean: Vec::with_capacity(p),
        estimator_var: Vec::with_capacity(p),
        limit_mean: Vec::with_capacity(p),
        limit_var: Vec::with_capacity(p),
    };
    for j in 0..p {
        let est = column(&rescaled, j);
        let lim = column(limit, j);
        let zeros: Vec<f64> = ok.iter().map(|r| if r.zero_pattern[j] { 0.0 } else { 1.0 }).collect();
        report.ks.push(ks_two_sample(&est, &lim));
        report.wasserstein.push(wasserstein1(&est, &lim));
        report.zero_fraction.push(zero_fraction(&zeros));
        report.limit_zero_fraction.push(zero_fraction(&lim));
        report.estimator_mean.push(mean(&est));
        report.estimator_var.push(variance(&est));
        report.limit_mean.push(mean(&lim));
        report.limit_var.push(variance(&lim));
    }
    Ok(report)
}

/// Rescaled errors at a single ε against `n_limit` draws of `argmin V`.
pub fn run_limit_comparison(config: &ExperimentConfig, n_limit: usize) -> Result<ComparisonReport> {
    let exp = Experiment::new(config, false)?;
    if config.eps_list.len() != 1 {
        return Err(Error::invalid("limit comparison needs exactly one eps"));
    }
    let records = run_estimates(&exp);
    let limit = limit_samples(&exp, n_limit)?;
    compare_samples(&records, &limit, &exp.limit_spec()?)
}

/// Draws of `argmin V` for an experiment.
pub fn limit_samples(exp: &Experiment, n: usize) -> Result<Vec<Vec<f64>>> {
    let spec = exp.limit_spec()?;
    let seed = stream_seed(exp.config.base_seed, 0, 0, Role::Limit);
    sample_limit_distribution(&exp.model, &exp.config.theta_star, &exp.mu, &spec, n, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityRow {
    pub eps: f64,
    pub coord: usize,
    /// Whether `θ*_j = 0`; for the others the fraction is a false-zero rate.
    pub null: bool,
    pub zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityTable {
    pub rows: Vec<SparsityRow>,
}

impl SparsityTable {
    pub fn fraction(&self, eps: f64, coord: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.eps == eps && r.coord == coord)
            .map(|r| r.zero_fraction)
    }
}

/// Fraction of replications with an exact zero, per ε and coordinate.
pub fn run_sparsity(config: &ExperimentConfig) -> Result<SparsityTable> {
    if !config.theta_star.contains(&0.0) {
        return Err(Error::invalid("sparsity experiment needs at least one zero in theta_star"));
    }
    let exp = Experiment::new(config, false)?;
    let records = run_estimates(&exp);
    check_failures(&records)?;
    let mut rows = Vec::new();
    for (e, &eps) in config.eps_list.iter().enumerate() {
        let ok: Vec<&RepRecord> = records.iter().filter(|r| r.eps_index == e && !r.failed()).collect();
        for (j, t) in config.theta_star.iter().enumerate() {
            let zeros = ok.iter().filter(|r| r.zero_pattern[j]).count();
            rows.push(SparsityRow {
                eps,
                coord: j,
                null: *t == 0.0,
                zero_fraction: zeros as f64 / ok.len().max(1) as f64,
            });
        }
    }
    Ok(SparsityTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_law::{limit_argmins, FisherInfo, ZetaSample};

    fn config(model: &str, theta: Vec<f64>, eps: Vec<f64>, reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            model: model.into(),
            theta_star: theta,
            eps_list: eps,
            reps,
            gamma: 1.0,
            lambda_rule: LambdaRule::Eps { lambda0: 0.0 },
            n_steps: 100,
            base_seed: 7,
            optimizer: OptimizerConfig::default(),
            paper_literal_gamma1: false,
        }
    }

    #[test]
    fn validation() {
        let ok = config("CM1", vec![0.7], vec![0.1], 2);
        assert!(Experiment::new(&ok, false).is_ok());
        let bad = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = ok.clone();
            f(&mut c);
            Experiment::new(&c, false).is_err()
        };
        assert!(bad(&|c| c.model = "nope".into()));
        assert!(bad(&|c| c.theta_star = vec![0.7, 0.1]));
        assert!(bad(&|c| c.theta_star = vec![2.0]));
        assert!(bad(&|c| c.eps_list = vec![]));
        assert!(bad(&|c| c.eps_list = vec![0.1, 0.1]));
        assert!(bad(&|c| c.eps_list = vec![0.0]));
        assert!(bad(&|c| c.reps = 0));
        assert!(bad(&|c| c.gamma = 0.0));
        assert!(bad(&|c| c.n_steps = 1));
        let mut zero = ok.clone();
        zero.eps_list = vec![0.0];
        assert!(Experiment::new(&zero, true).is_ok());
    }

    #[test]
    fn rescaled_error_consistent() {
        let exp = Experiment::new(&config("SM1", vec![1.0, 0.5], vec![0.1, 0.05], 3), false).unwrap();
        let recs = run_estimates(&exp);
        assert_eq!(recs.len(), 6);
        for r in &recs {
            for j in 0..2 {
                let expect = (r.theta_hat[j] - exp.config.theta_star[j]) / r.eps;
                assert!((r.rescaled_error[j] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
        let order: Vec<(usize, usize)> = recs.iter().map(|r| (r.eps_index, r.rep)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]);
    }

    #[test]
    fn execution_order_does_not_matter() {
        let exp = Experiment::new(&config("CM1", vec![0.7], vec![0.1], 6), false).unwrap();
        let forward: Vec<RepRecord> = (0..6).map(|r| one_rep(&exp, 0, r)).collect();
        let mut backward: Vec<RepRecord> = (0..6).rev().map(|r| one_rep(&exp, 0, r)).collect();
        backward.reverse();
        let strip = |v: Vec<RepRecord>| -> Vec<Vec<f64>> { v.into_iter().map(|r| r.theta_hat).collect() };
        assert_eq!(strip(forward), strip(backward));
        let table1 = consistency_table(&exp, &run_estimates(&exp)).unwrap();
        let table2 = run_consistency(&exp.config).unwrap();
        assert_eq!(table1, table2);
    }

    #[test]
    fn failure_cap() {
        let mut recs: Vec<RepRecord> = (0..10)
            .map(|rep| RepRecord {
                eps: 0.1,
                eps_index: 0,
                rep,
                theta_hat: vec![0.0],
                rescaled_error: vec![0.0],
                zero_pattern: vec![true],
                contrast: 0.0,
                converged: true,
                failure: None,
                wall_time: 0.0,
            })
            .collect();
        recs[0].failure = Some("x".into());
        recs[1].failure = Some("x".into());
        assert!(check_failures(&recs).is_ok());
        recs[2].failure = Some("x".into());
        assert!(matches!(check_failures(&recs), Err(Error::ExperimentFailed { failed: 3, total: 10 })));
    }

    #[test]
    fn zero_zeta_stub() {
        let exp = Experiment::new(&config("CM1", vec![0.7], vec![0.1], 4), false).unwrap();
        let recs = run_estimates(&exp);
        let spec = exp.limit_spec().unwrap();
        let limit = limit_argmins(&vec![ZetaSample { value: vec![0.0] }; 50], &spec).unwrap();
        assert!(limit.iter().all(|u| u == &vec![0.0]));
        let report = compare_samples(&recs, &limit, &spec).unwrap();
        assert_eq!(report.limit_zero_fraction, vec![1.0]);
        assert_eq!(report.limit_var[0], 0.0);
        let _ = FisherInfo::from_rows(&[vec![1.0]]);
    }

    #[test]
    fn sparsity_requires_null_coordinate() {
        assert!(run_sparsity(&config("SM1", vec![1.0, 0.5], vec![0.1], 1)).is_err());
    }
}
