//! The penalized contrast `Z(θ) = ‖X − x(θ)‖ + λ Σ_j |θ_j|^γ` and its
//! minimizer over the parameter box.
//!
//! The minimizer runs Nelder–Mead from several starts. When `γ ≤ 1` and
//! `λ > 0` each distinct local solution is then polished by cyclic
//! coordinate descent: every one-dimensional subproblem is searched by
//! golden section on each side of zero and the value at exactly zero is
//! tested explicitly, since the penalty is not differentiable there.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{solve_limit_ode, Trajectory};
use crate::error::{Error, Result};
use crate::metric::distance_values;
use crate::model::{Measure, ModelSpec};
use crate::optim::{golden_section, latin_hypercube, lex_cmp, nelder_mead};

/// Slack used by the exact-zero rule and by value ties between candidates.
pub const ZERO_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl PenaltyConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        let cfg = PenaltyConfig { gamma, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No penalty.
    pub fn unpenalized() -> Self {
        PenaltyConfig { gamma: 1.0, lambda: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Whether the nonsmooth coordinate polish applies.
    fn polishes(&self) -> bool {
        self.gamma <= 1.0 && self.lambda > 0.0
    }
}

/// How the penalty level scales with the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaRule {
    /// `λ_ε = λ0·ε`
    Eps { lambda0: f64 },
    /// `λ_ε = λ0·ε^{1−γ}`
    EpsPow { lambda0: f64 },
}

impl LambdaRule {
    pub fn lambda0(&self) -> f64 {
        match *self {
            LambdaRule::Eps { lambda0 } | LambdaRule::EpsPow { lambda0 } => lambda0,
        }
    }

    pub fn lambda(&self, eps: f64, gamma: f64) -> f64 {
        match *self {
            LambdaRule::Eps { lambda0 } => lambda0 * eps,
            LambdaRule::EpsPow { lambda0 } => lambda0 * eps.powf(1.0 - gamma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l0 = self.lambda0();
        if !(l0.is_finite() && l0 >= 0.0) {
            return Err(Error::invalid(format!("lambda0 must be >= 0, got {l0}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Number of multi-start points.
    pub starts: usize,
    /// Evaluation cap per Nelder–Mead run.
    pub max_evals: usize,
    /// Simplex-diameter tolerance.
    pub tol: f64,
    /// Seed of the Latin-hypercube start points.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            starts: 8,
            max_evals: 2000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::invalid("optimizer needs at least one start"));
        }
        if self.max_evals == 0 {
            return Err(Error::invalid("optimizer max_evals must be positive"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::invalid("optimizer tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult {
    pub theta_hat: Vec<f64>,
    pub contrast_value: f64,
    /// `zero_pattern[j] ⇔ theta_hat[j] == 0`
    pub zero_pattern: Vec<bool>,
    pub n_evals: usize,
    pub starts_used: usize,
    pub converged: bool,
}

/// `λ Σ_j |u_j|^γ`
pub fn penalty(u: &[f64], cfg: &PenaltyConfig) -> f64 {
    cfg.lambda * u.iter().map(|v| v.abs().powf(cfg.gamma)).sum::<f64>()
}

/// `‖X − x(θ)‖_{L2(μ)} + penalty(θ)`
pub fn contrast(
    observed: &Trajectory,
    model: &ModelSpec,
    theta: &[f64],
    cfg: &PenaltyConfig,
    mu: &Measure,
) -> Result<f64> {
    Objective::new(observed, model, cfg, mu)?.value(theta)
}

/// Contrast with the inputs checked once, counting evaluations.
struct Objective<'a> {
    observed: &'a [f64],
    model: &'a ModelSpec,
    cfg: &'a PenaltyConfig,
    mu: &'a Measure,
    evals: Cell<usize>,
}

impl<'a> Objective<'a> {
    fn new(observed: &'a Trajectory, model: &'a ModelSpec, cfg: &'a PenaltyConfig, mu: &'a Measure) -> Result<Self> {
        cfg.validate()?;
        if observed.grid() != mu.grid() {
            return Err(Error::invalid("observed path and measure live on different grids"));
        }
        model.check_grid(mu.grid())?;
        Ok(Objective {
            observed: observed.values(),
            model,
            cfg,
            mu,
            evals: Cell::new(0),
        })
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.evals.set(self.evals.get() + 1);
        let x = solve_limit_ode(self.model, theta, self.mu.grid())?;
        Ok(distance_values(self.observed, x.values(), self.mu.weights()) + penalty(theta, self.cfg))
    }

    /// Value with failures mapped to `+∞` for the search routines.
    fn value_or_inf(&self, theta: &[f64]) -> f64 {
        self.value(theta).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    theta: Vec<f64>,
    value: f64,
}

impl Candidate {
    fn zeros(&self) -> usize {
        self.theta.iter().filter(|t| **t == 0.0).count()
    }

    /// Lower value wins; within [`ZERO_SLACK`], more zeros then the
    /// lexicographically smaller θ.
    fn beats(&self, other: &Candidate) -> bool {
        if (self.value - other.value).abs() > ZERO_SLACK {
            return self.value < other.value;
        }
        match self.zeros().cmp(&other.zeros()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => lex_cmp(&self.theta, &other.theta).is_lt(),
        }
    }
}

/// Start points: box corners (at most `2^min(p,3)`) then a Latin-hypercube fill.
fn start_points(model: &ModelSpec, opt: &OptimizerConfig) -> Vec<Vec<f64>> {
    let bounds = model.theta_box();
    let p = bounds.dim();
    let n_corners = (1usize << p.min(3)).min(opt.starts);
    let mut starts: Vec<Vec<f64>> = (0..n_corners)
        .map(|i| {
            (0..p)
                .map(|j| {
                    if j < usize::BITS as usize && (i >> j) & 1 == 1 {
                        bounds.upper()[j]
                    } else {
                        bounds.lower()[j]
                    }
                })
                .collect()
        })
        .collect();
    let fill = opt.starts - n_corners;
    if fill > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        starts.extend(latin_hypercube(bounds, fill, &mut rng));
    }
    starts
}

/// Cyclic coordinate descent with an explicit test of `θ_j = 0`.
///
/// Returns the polished point and the contrast value after each pass (the
/// first entry is the starting value).
fn polish(objective: &Objective<'_>, start: Candidate, tol: f64) -> (Candidate, Vec<f64>) {
    const MAX_PASSES: usize = 50;
    let bounds = objective.model.theta_box();
    let mut current = start;
    let mut history = vec![current.value];
    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for j in 0..current.theta.len() {
            let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
            let c = current.theta[j];
            let mut trial = current.theta.clone();
            let mut line = |v: f64| {
                trial[j] = v;
                objective.value_or_inf(&trial)
            };
            let line_tol = tol.max(1e-10 * (hi - lo).max(1.0));

            // best point off zero, over both half-intervals and a local bracket
            let mut best_off: Option<(f64, f64)> = None;
            let mut consider = |x: f64, v: f64| {
                if x != 0.0 && best_off.map_or(true, |(_, bv)| v < bv) {
                    best_off = Some((x, v));
                }
            };
            let sides = [(lo, hi.min(0.0)), (lo.max(0.0), hi)];
            for (a, b) in sides {
                if a < b {
                    let (x, v, _) = golden_section(&mut line, a, b, line_tol);
                    consider(x, v);
                }
            }
            if c != 0.0 {
                let (side_lo, side_hi) = if c > 0.0 { (lo.max(0.0), hi) } else { (lo, hi.min(0.0)) };
                let w = 0.05 * (hi - lo);
                let (a, b) = ((c - w).max(side_lo), (c + w).min(side_hi));
                if a < b {
                    let (x, v, _) = golden_section(&mut line, a, b, line_tol);
                    consider(x, v);
                }
                consider(c, current.value);
            }
            let zero_value = if lo <= 0.0 && 0.0 <= hi { Some(line(0.0)) } else { None };

            let off_value = best_off.map_or(f64::INFINITY, |(_, v)| v);
            let (next, next_value) = match zero_value {
                Some(z) if z <= off_value + ZERO_SLACK => (0.0, z),
                _ => match best_off {
                    Some((x, v)) if v < current.value => (x, v),
                    _ => (c, current.value),
                },
            };
            if next != c {
                if (next - c).abs() > ZERO_SLACK || next == 0.0 {
                    moved = true;
                }
                current.theta[j] = next;
                current.value = next_value;
            }
        }
        history.push(current.value);
        if !moved {
            break;
        }
    }
    (current, history)
}

/// Multi-start minimizer of [`contrast`] over the model's parameter box.
pub fn minimize_contrast(
    observed: &Trajectory,
    model: &ModelSpec,
    cfg: &PenaltyConfig,
    mu: &Measure,
    opt: &OptimizerConfig,
) -> Result<EstimateResult> {
    opt.validate()?;
    let objective = Objective::new(observed, model, cfg, mu)?;
    let starts = start_points(model, opt);

    let mut local: Vec<(Candidate, bool)> = Vec::with_capacity(starts.len());
    for s in &starts {
        let mut f = |th: &[f64]| objective.value_or_inf(th);
        let out = nelder_mead(&mut f, s, model.theta_box(), opt.max_evals, opt.tol);
        if out.value.is_finite() {
            local.push((
                Candidate {
                    theta: out.x,
                    value: out.value,
                },
                out.converged,
            ));
        }
    }
    if local.is_empty() {
        return Err(Error::OptimizationFailed {
            reason: format!("all {} starts failed to produce a finite contrast", starts.len()),
            n_evals: objective.evals.get(),
        });
    }

    if cfg.polishes() {
        // polish each distinct local solution once
        let mut distinct: Vec<(Candidate, bool)> = Vec::new();
        for (cand, conv) in local {
            let dup = distinct.iter().any(|(d, _)| {
                d.theta.iter().zip(&cand.theta).all(|(a, b)| (a - b).abs() <= 1e-6)
            });
            if !dup {
                distinct.push((cand, conv));
            }
        }
        local = distinct
            .into_iter()
            .map(|(cand, conv)| (polish(&objective, cand, opt.tol).0, conv))
            .collect();
    }

    let mut best = 0;
    for i in 1..local.len() {
        if local[i].0.beats(&local[best].0) {
            best = i;
        }
    }
    let (winner, converged) = local.swap_remove(best);
    finish(&objective, winner.theta, starts.len(), converged)
}

fn finish(objective: &Objective<'_>, mut theta: Vec<f64>, starts_used: usize, converged: bool) -> Result<EstimateResult> {
    for t in theta.iter_mut() {
        if *t == 0.0 {
            *t = 0.0; // drop the sign of -0.0
        }
    }
    let contrast_value = objective.value(&theta)?;
    Ok(EstimateResult {
        zero_pattern: theta.iter().map(|t| *t == 0.0).collect(),
        theta_hat: theta,
        contrast_value,
        n_evals: objective.evals.get(),
        starts_used,
        converged,
    })
}

/// Exhaustive search over a uniform lattice of `points_per_dim^p` points.
/// Ties keep the lexicographically smallest θ.
pub fn grid_oracle(
    observed: &Trajectory,
    model: &ModelSpec,
    cfg: &PenaltyConfig,
    mu: &Measure,
    points_per_dim: usize,
) -> Result<EstimateResult> {
    let p = model.dim();
    if p > 3 {
        return Err(Error::invalid(format!("grid oracle supports p <= 3, got {p}")));
    }
    if points_per_dim < 3 {
        return Err(Error::invalid("grid oracle needs at least 3 points per dimension"));
    }
    let objective = Objective::new(observed, model, cfg, mu)?;
    let bounds = model.theta_box();
    let axis = |j: usize, i: usize| {
        let (lo, hi) = (bounds.lower()[j], bounds.upper()[j]);
        lo + (hi - lo) * (i as f64 / (points_per_dim - 1) as f64)
    };
    let total = points_per_dim.pow(p as u32);
    let mut best: Option<Candidate> = None;
    let mut theta = vec![0.0; p];
    for idx in 0..total {
        // first coordinate varies slowest: lexicographic order
        let mut rem = idx;
        for j in (0..p).rev() {
            theta[j] = axis(j, rem % points_per_dim);
            rem /= points_per_dim;
        }
        let v = objective.value_or_inf(&theta);
        if v.is_finite() && best.as_ref().map_or(true, |b| v < b.value) {
            best = Some(Candidate {
                theta: theta.clone(),
                value: v,
            });
        }
    }
    match best {
        Some(b) => finish(&objective, b.theta, 0, true),
        None => Err(Error::OptimizationFailed {
            reason: "contrast not finite anywhere on the lattice".into(),
            n_evals: objective.evals.get(),
        }),
    }
}
