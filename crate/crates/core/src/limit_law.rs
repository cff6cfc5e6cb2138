//! Asymptotic objects of the rescaled estimation error `ε⁻¹(θ̂ − θ*)`:
//! the Fisher information `I(θ) = ∫ ẋ_t ẋ_tᵀ dμ`, the Gaussian vector
//! `ζ = ∫ x⁽¹⁾_t ẋ_t(θ*) dμ`, and the random limit objective
//!
//! ```text
//! V(u) = −2uᵀζ + uᵀ I u + λ0 · P(u)
//! ```
//!
//! whose penalty part `P` depends on the regime of γ (see [`Regime`]).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{draw_normals, solve_limit_ode, solve_sensitivity, FirstOrder, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Measure, ModelSpec};
use crate::optim::lex_cmp;
use crate::streams::{derive_seed, rng_from_seed};

const MAX_ITERS: usize = 10_000;

/// Symmetric positive definite `p × p` information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    matrix: DMatrix<f64>,
}

impl FisherInfo {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::invalid("information matrix must be square and nonempty"));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("information matrix is not symmetric"));
        }
        if matrix.clone().cholesky().is_none() {
            let min_eigenvalue = matrix.clone().symmetric_eigen().eigenvalues.min();
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        Ok(FisherInfo { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("information matrix must be square"));
        }
        FisherInfo::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// Solves `I u = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let chol = self.matrix.clone().cholesky().expect("checked at construction");
        chol.solve(&DVector::from_column_slice(rhs)).iter().copied().collect()
    }

    fn quad(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        v.dot(&(&self.matrix * &v))
    }
}

/// `I_{jk} = Σ_m w_m ẋ_{t_m,j} ẋ_{t_m,k}` with `ẋ` from [`solve_sensitivity`].
pub fn fisher_info(model: &ModelSpec, theta: &[f64], mu: &Measure) -> Result<FisherInfo> {
    let sens = solve_sensitivity(model, theta, mu.grid())?;
    let p = sens.dim();
    let rows = sens.rows();
    let raw = DMatrix::from_fn(p, p, |i, j| {
        rows[i]
            .iter()
            .zip(&rows[j])
            .zip(mu.weights())
            .map(|((a, b), w)| w * a * b)
            .sum::<f64>()
    });
    FisherInfo::new(0.5 * (&raw + raw.transpose()))
}

/// Regime of the penalty exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `γ > 1`: linear drift term `λ0 Σ u_j sgn(θ*_j)|θ*_j|^{γ−1}`.
    Smooth,
    /// `γ = 1`: `λ0 Σ (|u_j| 1{θ*_j = 0} + u_j sgn(θ*_j) 1{θ*_j ≠ 0})`.
    Lasso,
    /// `0 < γ < 1`: `λ0 Σ |u_j|^γ 1{θ*_j = 0}`.
    Bridge,
}

impl Regime {
    pub fn of(gamma: f64) -> Regime {
        if gamma > 1.0 {
            Regime::Smooth
        } else if gamma == 1.0 {
            Regime::Lasso
        } else {
            Regime::Bridge
        }
    }
}

/// Everything that defines `V(u)` apart from ζ.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawSpec {
    pub theta_star: Vec<f64>,
    pub info: FisherInfo,
    pub gamma: f64,
    pub lambda0: f64,
    /// At `γ = 1`, weight the linear term of nonzero coordinates by
    /// `|θ*_j|` (`u_j sgn(θ*_j)|θ*_j|`) instead of the default `u_j sgn(θ*_j)`,
    /// which is the `γ → 1` limit of the smooth-regime term.
    pub paper_literal_gamma1: bool,
}

impl LimitLawSpec {
    pub fn new(theta_star: Vec<f64>, info: FisherInfo, gamma: f64, lambda0: f64) -> Result<Self> {
        let spec = LimitLawSpec {
            theta_star,
            info,
            gamma,
            lambda0,
            paper_literal_gamma1: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_paper_literal_gamma1(mut self, on: bool) -> Self {
        self.paper_literal_gamma1 = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_star.len() != self.info.dim() {
            return Err(Error::invalid(format!(
                "θ* has {} coordinates, information matrix is {}×{}",
                self.theta_star.len(),
                self.info.dim(),
                self.info.dim()
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return Err(Error::invalid(format!("lambda0 must be >= 0, got {}", self.lambda0)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn regime(&self) -> Regime {
        Regime::of(self.gamma)
    }

    /// Coordinates carrying a nonsmooth penalty term: `θ*_j = 0`, for `γ ≤ 1`.
    fn penalized(&self, j: usize) -> bool {
        self.regime() != Regime::Smooth && self.theta_star[j] == 0.0 && self.lambda0 > 0.0
    }

    /// Coefficients `c` of the linear term `λ0 cᵀu`.
    fn linear_coefficients(&self) -> Vec<f64> {
        self.theta_star
            .iter()
            .map(|&t| match self.regime() {
                Regime::Smooth => sgn(t) * t.abs().powf(self.gamma - 1.0),
                Regime::Lasso if self.paper_literal_gamma1 => sgn(t) * t.abs(),
                Regime::Lasso => sgn(t),
                Regime::Bridge => 0.0,
            })
            .collect()
    }
}

/// Sign with `sgn(0) = 0`.
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZetaSample {
    pub value: Vec<f64>,
}

/// Draws of ζ with the base path and sensitivities computed once.
#[derive(Debug, Clone)]
pub struct ZetaSampler {
    model: ModelSpec,
    theta_star: Vec<f64>,
    mu: Measure,
    base: Trajectory,
    /// `w_m ẋ_{t_m,j}`, row per coordinate.
    weighted_sens: Vec<Vec<f64>>,
}

impl ZetaSampler {
    pub fn new(model: &ModelSpec, theta_star: &[f64], mu: &Measure) -> Result<Self> {
        let base = solve_limit_ode(model, theta_star, mu.grid())?;
        let sens = solve_sensitivity(model, theta_star, mu.grid())?;
        let weighted_sens = sens
            .rows()
            .iter()
            .map(|r| r.iter().zip(mu.weights()).map(|(d, w)| d * w).collect())
            .collect();
        Ok(ZetaSampler {
            model: model.clone(),
            theta_star: theta_star.to_vec(),
            mu: mu.clone(),
            base,
            weighted_sens,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ZetaSample> {
        let xi = draw_normals(self.mu.grid(), rng);
        self.draw_with_normals(&xi)
    }

    /// ζ for the first-order path driven by the given standard normals.
    pub fn draw_with_normals(&self, normals: &[f64]) -> Result<ZetaSample> {
        let y = FirstOrder::new(&self.model, &self.theta_star, &self.base)?.simulate(normals)?;
        let value = self
            .weighted_sens
            .iter()
            .map(|row| row.iter().zip(y.values()).map(|(a, b)| a * b).sum())
            .collect();
        Ok(ZetaSample { value })
    }
}

/// One draw of `ζ = Σ_m w_m x⁽¹⁾_{t_m} ẋ_{t_m}(θ*)`.
pub fn sample_zeta<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta_star: &[f64],
    mu: &Measure,
    rng: &mut R,
) -> Result<ZetaSample> {
    ZetaSampler::new(model, theta_star, mu)?.draw(rng)
}

/// `V(u) = −2uᵀζ + uᵀIu + λ0·P(u)`.
pub fn limit_objective(u: &[f64], zeta: &ZetaSample, spec: &LimitLawSpec) -> f64 {
    let linear: f64 = u.iter().zip(&zeta.value).map(|(a, z)| a * z).sum();
    let c = spec.linear_coefficients();
    let mut pen: f64 = u.iter().zip(&c).map(|(a, c)| a * c).sum();
    for (j, uj) in u.iter().enumerate() {
        if spec.theta_star[j] == 0.0 {
            match spec.regime() {
                Regime::Lasso => pen += uj.abs(),
                Regime::Bridge => pen += uj.abs().powf(spec.gamma),
                Regime::Smooth => {}
            }
        }
    }
    -2.0 * linear + spec.info.quad(u) + spec.lambda0 * pen
}

/// `argmin_u V(u)`.
///
/// * `γ > 1`: the stationary point `I⁻¹(ζ − λ0 c/2)`.
/// * `γ = 1`: proximal gradient (ISTA) with soft-thresholding on the null
///   coordinates, finished by an exact solve on the detected support.
/// * `γ < 1`: coordinate descent with an exact scalar minimizer, started
///   from every sign orthant of the null coordinates.
pub fn minimize_limit_objective(zeta: &ZetaSample, spec: &LimitLawSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if zeta.value.len() != spec.dim() {
        return Err(Error::invalid("ζ and θ* differ in dimension"));
    }
    let c = spec.linear_coefficients();
    let rhs: Vec<f64> = zeta
        .value
        .iter()
        .zip(&c)
        .map(|(z, c)| z - 0.5 * spec.lambda0 * c)
        .collect();
    let any_penalized = (0..spec.dim()).any(|j| spec.penalized(j));
    if !any_penalized {
        return Ok(spec.info.solve(&rhs));
    }
    match spec.regime() {
        Regime::Smooth => unreachable!("smooth regime has no penalized coordinates"),
        Regime::Lasso => lasso_argmin(&rhs, spec),
        Regime::Bridge => bridge_argmin(&rhs, spec),
    }
}

/// Soft-threshold operator.
fn soft(x: f64, t: f64) -> f64 {
    sgn(x) * (x.abs() - t).max(0.0)
}

/// Minimizes `uᵀIu − 2uᵀr + λ0 Σ_{null} |u_j|`.
fn lasso_argmin(r: &[f64], spec: &LimitLawSpec) -> Result<Vec<f64>> {
    let p = spec.dim();
    let info = spec.info.matrix();
    let lmax = info.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / (2.0 * lmax);
    let mut u = vec![0.0; p];
    let mut converged = false;
    for _ in 0..MAX_ITERS {
        let iu = info * DVector::from_column_slice(&u);
        let mut change: f64 = 0.0;
        let next: Vec<f64> = (0..p)
            .map(|j| {
                let v = u[j] - step * (2.0 * iu[j] - 2.0 * r[j]);
                if spec.penalized(j) {
                    soft(v, step * spec.lambda0)
                } else {
                    v
                }
            })
            .collect();
        for (a, b) in next.iter().zip(&u) {
            change = change.max((a - b).abs());
        }
        u = next;
        if change < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::OptimizationFailed {
            reason: "proximal gradient did not converge".into(),
            n_evals: MAX_ITERS,
        });
    }
    Ok(refine_lasso_support(&u, r, spec).unwrap_or(u))
}

/// Exact solution on the support of an approximate lasso minimizer; `None`
/// when the optimality conditions fail to hold for the candidate.
fn refine_lasso_support(u: &[f64], r: &[f64], spec: &LimitLawSpec) -> Option<Vec<f64>> {
    let p = spec.dim();
    let info = spec.info.matrix();
    let support: Vec<usize> = (0..p).filter(|&j| !spec.penalized(j) || u[j] != 0.0).collect();
    let signs: Vec<f64> = support
        .iter()
        .map(|&j| if spec.penalized(j) { sgn(u[j]) } else { 0.0 })
        .collect();
    let mut out = vec![0.0; p];
    if !support.is_empty() {
        let sub = DMatrix::from_fn(support.len(), support.len(), |a, b| info[(support[a], support[b])]);
        let rhs = DVector::from_fn(support.len(), |a, _| r[support[a]] - 0.5 * spec.lambda0 * signs[a]);
        let sol = sub.cholesky()?.solve(&rhs);
        for (a, &j) in support.iter().enumerate() {
            if signs[a] != 0.0 && sgn(sol[a]) != signs[a] {
                return None;
            }
            out[j] = sol[a];
        }
    }
    // subgradient condition on the zeroed coordinates
    let iu = info * DVector::from_column_slice(&out);
    for j in (0..p).filter(|j| !support.contains(j)) {
        if (2.0 * iu[j] - 2.0 * r[j]).abs() > spec.lambda0 * (1.0 + 1e-9) {
            return None;
        }
    }
    Some(out)
}

/// `argmin_{u ∈ ℝ} a u² − 2 b u + λ|u|^γ` for `a > 0`, `λ ≥ 0`, `0 < γ < 1`.
/// Zero wins ties.
pub(crate) fn bridge_scalar_argmin(a: f64, b: f64, lambda: f64, gamma: f64) -> f64 {
    if lambda == 0.0 {
        return b / a;
    }
    if b == 0.0 {
        return 0.0;
    }
    // by symmetry, search v > 0 for g(v) = a v² − 2|b| v + λ v^γ
    let bb = b.abs();
    let g = |v: f64| a * v * v - 2.0 * bb * v + lambda * v.powf(gamma);
    let dg = |v: f64| 2.0 * a * v - 2.0 * bb + lambda * gamma * v.powf(gamma - 1.0);
    // g' is convex on (0, ∞) with its minimum where g'' = 0
    let v0 = (lambda * gamma * (1.0 - gamma) / (2.0 * a)).powf(1.0 / (2.0 - gamma));
    if dg(v0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (v0, v0 + bb / a);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dg(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let v = if g(lo) <= g(hi) { lo } else { hi };
    if g(v) < 0.0 {
        sgn(b) * v
    } else {
        0.0
    }
}

/// Minimizes `uᵀIu − 2uᵀr + λ0 Σ_{null} |u_j|^γ`.
fn bridge_argmin(r: &[f64], spec: &LimitLawSpec) -> Result<Vec<f64>> {
    let p = spec.dim();
    let info = spec.info.matrix();
    let null: Vec<usize> = (0..p).filter(|&j| spec.penalized(j)).collect();
    if null.len() > 16 {
        return Err(Error::invalid("too many null coordinates for orthant enumeration"));
    }
    let free = spec.info.solve(r);
    let value = |u: &[f64]| {
        let v = DVector::from_column_slice(u);
        let pen: f64 = null.iter().map(|&j| u[j].abs().powf(spec.gamma)).sum();
        v.dot(&(info * &v)) - 2.0 * r.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() + spec.lambda0 * pen
    };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity((1 << null.len()) + 1);
    let mut zeroed = free.clone();
    for &j in &null {
        zeroed[j] = 0.0;
    }
    starts.push(zeroed);
    for mask in 0..(1usize << null.len()) {
        let mut s = free.clone();
        for (bit, &j) in null.iter().enumerate() {
            let sign = if (mask >> bit) & 1 == 1 { 1.0 } else { -1.0 };
            s[j] = sign * free[j].abs().max(1e-3);
        }
        starts.push(s);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let u = coordinate_descent(s, r, spec)?;
        let v = value(&u);
        let better = match &best {
            None => true,
            Some((bu, bv)) => {
                if (v - bv).abs() > 1e-12 * (1.0 + bv.abs()) {
                    v < *bv
                } else {
                    let zeros = |x: &[f64]| x.iter().filter(|t| **t == 0.0).count();
                    match zeros(&u).cmp(&zeros(bu)) {
                        std::cmp::Ordering::Greater => true,
                        std::cmp::Ordering::Less => false,
                        std::cmp::Ordering::Equal => lex_cmp(&u, bu).is_lt(),
                    }
                }
            }
        };
        if better {
            best = Some((u, v));
        }
    }
    Ok(best.expect("at least one start").0)
}

fn coordinate_descent(mut u: Vec<f64>, r: &[f64], spec: &LimitLawSpec) -> Result<Vec<f64>> {
    let p = spec.dim();
    let info = spec.info.matrix();
    for _ in 0..MAX_ITERS {
        let mut change: f64 = 0.0;
        for j in 0..p {
            let a = info[(j, j)];
            let cross: f64 = (0..p).filter(|&k| k != j).map(|k| info[(j, k)] * u[k]).sum();
            let b = r[j] - cross;
            let next = if spec.penalized(j) {
                bridge_scalar_argmin(a, b, spec.lambda0, spec.gamma)
            } else {
                b / a
            };
            change = change.max((next - u[j]).abs());
            u[j] = next;
        }
        let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if change <= 1e-14 * scale {
            return Ok(u);
        }
    }
    Err(Error::OptimizationFailed {
        reason: "coordinate descent did not converge".into(),
        n_evals: MAX_ITERS,
    })
}

/// `argmin V` for each given ζ; also the hook for custom ζ sources.
pub fn limit_argmins(zetas: &[ZetaSample], spec: &LimitLawSpec) -> Result<Vec<Vec<f64>>> {
    zetas.par_iter().map(|z| minimize_limit_objective(z, spec)).collect()
}

/// `n` independent draws of `argmin V`; draw `i` uses the stream derived
/// from `(seed, i)`, so the output does not depend on thread count.
pub fn sample_limit_distribution(
    model: &ModelSpec,
    theta_star: &[f64],
    mu: &Measure,
    spec: &LimitLawSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("need at least one draw"));
    }
    spec.validate()?;
    if theta_star != spec.theta_star.as_slice() {
        return Err(Error::invalid("θ* differs from the limit-law specification"));
    }
    let sampler = ZetaSampler::new(model, theta_star, mu)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(&[seed, i as u64]));
            let zeta = sampler.draw(&mut rng)?;
            minimize_limit_objective(&zeta, spec)
        })
        .collect()
}
