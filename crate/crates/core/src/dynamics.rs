//! Solvers for the limiting integro-differential system, its parameter
//! sensitivities, the small-noise SDE and the first-order Gaussian process.
//!
//! All four share one explicit predictor–corrector (Heun) stepper on a
//! uniform grid. With additive noise the stochastic variant is
//!
//! ```text
//! X̃      = X_k + S_k(X_k) Δ + σ ΔW_k
//! X_{k+1} = X_k + ½ (S_k(X_k) + S_{k+1}(X̃)) Δ + σ ΔW_k
//! ```
//!
//! so a zero noise level reproduces the deterministic solve exactly. The
//! history term `∫_0^{t_k} K(θ, t_k, s, x_s) ds` is a trapezoid sum over the
//! nodes `0..=k`, where node `k` carries the value being evaluated (the
//! predictor when computing `S_{k+1}(X̃)`).

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Kernel, ModelSpec, TimeGrid};

/// Values of a scalar path on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "trajectory has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("trajectory value at node {k} is not finite")));
        }
        Ok(Trajectory { grid, values })
    }

    /// Samples `f(t)` on the nodes.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Trajectory::new(grid, grid.points().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn scaled(&self, c: f64) -> Trajectory {
        Trajectory {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// Row `j` holds `∂x_t(θ)/∂θ_j` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    grid: TimeGrid,
    rows: Vec<Vec<f64>>,
}

impl SensitivityTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Gradient vector `ẋ_{t_k}` at node `k`.
    pub fn at(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

/// Right-hand side of a (linear or nonlinear) integro-differential equation
/// evaluated on grid nodes.
trait Field {
    /// Local part at node `k` with state `x`.
    fn local(&self, k: usize, x: f64) -> f64;
    fn history(&self) -> HistoryShape<'_>;
}

enum HistoryShape<'a> {
    None,
    /// `kernel(k, i, x_i)` for `t = t_k`, `s = t_i`.
    General(Box<dyn Fn(usize, usize, f64) -> f64 + 'a>),
    /// `outer(k) · inner(i, x_i)`.
    Separable {
        outer: Box<dyn Fn(usize) -> f64 + 'a>,
        inner: Box<dyn Fn(usize, f64) -> f64 + 'a>,
    },
}

/// Drift of the limiting system at `θ`.
struct LimitField<'a> {
    model: &'a ModelSpec,
    theta: &'a [f64],
    grid: &'a TimeGrid,
}

impl Field for LimitField<'_> {
    #[inline]
    fn local(&self, k: usize, x: f64) -> f64 {
        self.model.drift(self.theta, self.grid.time(k), x)
    }

    fn history(&self) -> HistoryShape<'_> {
        let (theta, grid) = (self.theta, self.grid);
        match self.model.kernel() {
            Kernel::Zero => HistoryShape::None,
            Kernel::General { k, .. } => {
                HistoryShape::General(Box::new(move |tk, si, x| k(theta, grid.time(tk), grid.time(si), x)))
            }
            Kernel::Separable { a, b, .. } => HistoryShape::Separable {
                outer: Box::new(move |tk| a(theta, grid.time(tk))),
                inner: Box::new(move |si, x| b(theta, grid.time(si), x)),
            },
        }
    }
}

/// Linearization around a base path: `V_x(θ*, t, x_t)·y + ∫ K_x(θ*, t, s, x_s)·y_s ds`.
struct LinearizedField<'a> {
    model: &'a ModelSpec,
    theta: &'a [f64],
    grid: &'a TimeGrid,
    base: &'a [f64],
    local_coef: Vec<f64>,
    inner_coef: Vec<f64>,
}

impl<'a> LinearizedField<'a> {
    fn new(model: &'a ModelSpec, theta: &'a [f64], grid: &'a TimeGrid, base: &'a [f64]) -> Self {
        let local_coef = (0..grid.len())
            .map(|k| model.drift_x(theta, grid.time(k), base[k]))
            .collect();
        let inner_coef = match model.kernel() {
            Kernel::Separable { .. } => (0..grid.len())
                .map(|i| model.kernel().inner_x(theta, grid.time(i), base[i]))
                .collect(),
            _ => Vec::new(),
        };
        LinearizedField {
            model,
            theta,
            grid,
            base,
            local_coef,
            inner_coef,
        }
    }
}

impl Field for LinearizedField<'_> {
    #[inline]
    fn local(&self, k: usize, y: f64) -> f64 {
        self.local_coef[k] * y
    }

    fn history(&self) -> HistoryShape<'_> {
        let (theta, grid, base) = (self.theta, self.grid, self.base);
        match self.model.kernel() {
            Kernel::Zero => HistoryShape::None,
            kernel @ Kernel::General { .. } => HistoryShape::General(Box::new(move |tk, si, y| {
                kernel.eval_x(theta, grid.time(tk), grid.time(si), base[si]) * y
            })),
            Kernel::Separable { a, .. } => HistoryShape::Separable {
                outer: Box::new(move |tk| a(theta, grid.time(tk))),
                inner: Box::new(move |si, y| self.inner_coef[si] * y),
            },
        }
    }
}

/// Neumaier summation, so running and recomputed history sums agree to rounding.
#[derive(Debug, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn new(x: f64) -> Self {
        CompensatedSum { sum: x, carry: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Drift evaluator carrying the running sum for separable kernels.
struct Drift<'f, F: Field> {
    field: &'f F,
    shape: HistoryShape<'f>,
    dt: f64,
    /// `½·inner(0) + Σ_{0<i<k} inner(i)` over committed nodes `i < k`.
    partial: CompensatedSum,
}

impl<'f, F: Field> Drift<'f, F> {
    fn new(field: &'f F, dt: f64) -> Self {
        Drift {
            field,
            shape: field.history(),
            dt,
            partial: CompensatedSum::new(0.0),
        }
    }

    /// Drift at node `k` where `hist[..k]` are committed values and `x` is the
    /// value at node `k`.
    fn eval(&self, k: usize, hist: &[f64], x: f64) -> f64 {
        let local = self.field.local(k, x);
        if k == 0 {
            return local;
        }
        let integral = match &self.shape {
            HistoryShape::None => 0.0,
            HistoryShape::General(kernel) => {
                let mut sum = CompensatedSum::new(0.5 * kernel(k, 0, hist[0]));
                for (i, xi) in hist.iter().enumerate().take(k).skip(1) {
                    sum.add(kernel(k, i, *xi));
                }
                sum.add(0.5 * kernel(k, k, x));
                self.dt * sum.value()
            }
            HistoryShape::Separable { outer, inner } => {
                let mut sum = self.partial;
                sum.add(0.5 * inner(k, x));
                self.dt * outer(k) * sum.value()
            }
        };
        local + integral
    }

    /// Partial sum after node `k` (value `x`) is committed.
    fn advanced_partial(&self, k: usize, x: f64) -> CompensatedSum {
        let mut next = self.partial;
        if let HistoryShape::Separable { inner, .. } = &self.shape {
            let w = if k == 0 { 0.5 } else { 1.0 };
            next.add(w * inner(k, x));
        }
        next
    }

    fn commit(&mut self, k: usize, x: f64) {
        self.partial = self.advanced_partial(k, x);
    }
}

/// Heun stepping with optional additive increments `noise[k]` on step `k → k+1`.
fn integrate<F: Field>(field: &F, grid: &TimeGrid, x0: f64, noise: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    let dt = grid.step();
    let mut drift = Drift::new(field, dt);
    let mut values = Vec::with_capacity(n + 1);
    values.push(x0);
    for k in 0..n {
        let xk = values[k];
        let sk = drift.eval(k, &values, xk);
        let dw = noise.map_or(0.0, |w| w[k]);
        let pred = xk + sk * dt + dw;
        // the predictor needs the history through node k committed
        let committed = drift.advanced_partial(k, xk);
        let saved = std::mem::replace(&mut drift.partial, committed);
        let spred = drift.eval(k + 1, &values, pred);
        drift.partial = saved;
        let next = xk + 0.5 * (sk + spred) * dt + dw;
        if !next.is_finite() {
            return Err(Error::NumericalBlowup { time: grid.time(k + 1) });
        }
        drift.commit(k, xk);
        values.push(next);
    }
    Ok(values)
}

fn check_inputs(model: &ModelSpec, theta: &[f64], grid: &TimeGrid) -> Result<()> {
    model.check_theta(theta)?;
    model.check_grid(grid)
}

/// Solves `dx/dt = V(θ,t,x) + ∫_0^t K(θ,t,s,x_s) ds`, `x(0) = x0`.
pub fn solve_limit_ode(model: &ModelSpec, theta: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    check_inputs(model, theta, grid)?;
    let field = LimitField { model, theta, grid };
    let values = integrate(&field, grid, model.x0(), None)?;
    Ok(Trajectory { grid: *grid, values })
}

/// Central-difference step for coordinate `j`, shrunk to stay inside the
/// box; falls back to a one-sided difference on a box face.
fn sensitivity_step(model: &ModelSpec, theta: &[f64], j: usize) -> (f64, f64) {
    let h = 1e-5 * theta[j].abs().max(1.0);
    let (lo, hi) = (model.theta_box().lower()[j], model.theta_box().upper()[j]);
    if theta[j] < lo || theta[j] > hi {
        // outside the box: no constraint to honor
        return (h, h);
    }
    let room_up = hi - theta[j];
    let room_down = theta[j] - lo;
    let central = h.min(room_up).min(room_down);
    if central > 0.0 {
        (central, central)
    } else if room_up > 0.0 {
        (h.min(room_up), 0.0)
    } else if room_down > 0.0 {
        (0.0, h.min(room_down))
    } else {
        // degenerate coordinate (lo == hi)
        (h, h)
    }
}

/// `∂x_t(θ)/∂θ_j` for every `j` by finite differences of [`solve_limit_ode`]
/// with step `1e-5·max(1, |θ_j|)`.
pub fn solve_sensitivity(model: &ModelSpec, theta: &[f64], grid: &TimeGrid) -> Result<SensitivityTrajectory> {
    check_inputs(model, theta, grid)?;
    let needs_base = (0..model.dim()).any(|j| {
        let (up, down) = sensitivity_step(model, theta, j);
        up == 0.0 || down == 0.0
    });
    let base = if needs_base {
        Some(solve_limit_ode(model, theta, grid)?.values)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(model.dim());
    let mut shifted = theta.to_vec();
    for j in 0..model.dim() {
        let (up, down) = sensitivity_step(model, theta, j);
        shifted[j] = theta[j] + up;
        let plus = if up > 0.0 {
            solve_limit_ode(model, &shifted, grid)?.values
        } else {
            base.clone().expect("base path")
        };
        shifted[j] = theta[j] - down;
        let minus = if down > 0.0 {
            solve_limit_ode(model, &shifted, grid)?.values
        } else {
            base.clone().expect("base path")
        };
        shifted[j] = theta[j];
        let width = up + down;
        rows.push(plus.iter().zip(&minus).map(|(a, b)| (a - b) / width).collect());
    }
    Ok(SensitivityTrajectory { grid: *grid, rows })
}

/// Standard normal draws `ξ_0, …, ξ_{n−1}` in grid order.
pub fn draw_normals<R: Rng + ?Sized>(grid: &TimeGrid, rng: &mut R) -> Vec<f64> {
    (0..grid.n_steps()).map(|_| rng.sample(StandardNormal)).collect()
}

/// Simulates `dX = S_t(θ, X) dt + ε dW`, `X_0 = x0`.
///
/// Consumes exactly `n_steps` standard normals from `rng`, in grid order,
/// whatever the value of `eps`.
pub fn simulate_sde<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &[f64],
    eps: f64,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    let xi = draw_normals(grid, rng);
    simulate_sde_with_normals(model, theta, eps, grid, &xi)
}

/// [`simulate_sde`] driven by given standard normals.
pub fn simulate_sde_with_normals(
    model: &ModelSpec,
    theta: &[f64],
    eps: f64,
    grid: &TimeGrid,
    normals: &[f64],
) -> Result<Trajectory> {
    check_inputs(model, theta, grid)?;
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::invalid(format!("noise level must be finite and >= 0, got {eps}")));
    }
    check_normals(grid, normals)?;
    let scale = eps * grid.step().sqrt();
    let increments: Vec<f64> = normals.iter().map(|z| scale * z).collect();
    let field = LimitField { model, theta, grid };
    let values = integrate(&field, grid, model.x0(), Some(&increments))?;
    Ok(Trajectory { grid: *grid, values })
}

fn check_normals(grid: &TimeGrid, normals: &[f64]) -> Result<()> {
    if normals.len() != grid.n_steps() {
        return Err(Error::invalid(format!(
            "need {} normals, got {}",
            grid.n_steps(),
            normals.len()
        )));
    }
    Ok(())
}

/// Simulates the first-order process
/// `dy = (V_x(θ*,t,x_t)·y + ∫_0^t K_x(θ*,t,s,x_s)·y_s ds) dt + dW`, `y_0 = 0`,
/// with the coefficients taken along the limiting path `x(θ*)`.
pub fn simulate_first_order<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta_star: &[f64],
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Trajectory> {
    let base = solve_limit_ode(model, theta_star, grid)?;
    let xi = draw_normals(grid, rng);
    FirstOrder::new(model, theta_star, &base)?.simulate(&xi)
}

/// First-order process with its coefficients precomputed, for repeated draws.
pub struct FirstOrder<'a> {
    field: LinearizedField<'a>,
    grid: TimeGrid,
}

impl<'a> FirstOrder<'a> {
    pub fn new(model: &'a ModelSpec, theta_star: &'a [f64], base: &'a Trajectory) -> Result<Self> {
        check_inputs(model, theta_star, base.grid())?;
        let grid = *base.grid();
        Ok(FirstOrder {
            field: LinearizedField::new(model, theta_star, base.grid(), base.values()),
            grid,
        })
    }

    pub fn simulate(&self, normals: &[f64]) -> Result<Trajectory> {
        check_normals(&self.grid, normals)?;
        let sqdt = self.grid.step().sqrt();
        let increments: Vec<f64> = normals.iter().map(|z| sqdt * z).collect();
        let values = integrate(&self.field, &self.grid, 0.0, Some(&increments))?;
        Ok(Trajectory { grid: self.grid, values })
    }
}
