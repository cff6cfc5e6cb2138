//! Parametric models, the time grid, the measure μ and the registry of
//! built-in models with known solutions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// `(θ, t, x) -> value`
pub type PointFn = Arc<dyn Fn(&[f64], f64, f64) -> f64 + Send + Sync>;
/// `(θ, t, s, x_s) -> value`
pub type KernelFn = Arc<dyn Fn(&[f64], f64, f64, f64) -> f64 + Send + Sync>;
/// `(θ, t) -> value`
pub type TimeFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// Uniform grid `0 = t_0 < t_1 < … < t_n = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(Error::invalid(format!("n_steps must be at least 2, got {n_steps}")));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Time of node `k`; the last node is exactly `T`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// Shorthand for [`TimeGrid::new`].
pub fn build_time_grid(horizon: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, n_steps)
}

/// Quadrature weights representing μ on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    grid: TimeGrid,
    weights: Vec<f64>,
}

impl Measure {
    /// Lebesgue measure on `[0, T]` through trapezoid weights.
    pub fn lebesgue(grid: &TimeGrid) -> Self {
        let dt = grid.step();
        let mut weights = vec![dt; grid.len()];
        weights[0] = 0.5 * dt;
        weights[grid.n_steps()] = 0.5 * dt;
        Measure { grid: *grid, weights }
    }

    pub fn from_weights(grid: &TimeGrid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::invalid(format!(
                "measure has {} weights for a grid of {} nodes",
                weights.len(),
                grid.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("measure weights must be finite and nonnegative"));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("measure must have positive total mass"));
        }
        Ok(Measure { grid: *grid, weights })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Shorthand for [`Measure::lebesgue`].
pub fn lebesgue_measure(grid: &TimeGrid) -> Measure {
    Measure::lebesgue(grid)
}

/// Closed parameter box Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("parameter box bounds must be nonempty and of equal length"));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::invalid(format!(
                    "parameter box coordinate {j}: need finite lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(ParamBox { lower, upper })
    }

    /// The same interval `[lo, hi]` in every one of `dim` coordinates.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        ParamBox::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
    }

    /// `θ` strictly inside the box in every coordinate.
    pub fn contains_interior(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *lo < *t && *t < *hi)
    }

    pub fn clamp_in_place(&self, theta: &mut [f64]) {
        for (j, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[j], self.upper[j]);
        }
    }
}

/// History kernel `K(θ, t, s, x_s)` of the drift.
#[derive(Clone)]
pub enum Kernel {
    /// `K ≡ 0`; the drift is local.
    Zero,
    /// Arbitrary kernel; costs `O(n²)` per solve.
    General { k: KernelFn, k_x: Option<KernelFn> },
    /// `K(θ,t,s,x) = a(θ,t)·b(θ,s,x)`; solved with running sums in `O(n)`.
    Separable {
        a: TimeFn,
        b: PointFn,
        b_x: Option<PointFn>,
    },
}

impl Kernel {
    pub fn general(k: impl Fn(&[f64], f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Kernel::General { k: Arc::new(k), k_x: None }
    }

    pub fn separable(
        a: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Kernel::Separable {
            a: Arc::new(a),
            b: Arc::new(b),
            b_x: None,
        }
    }

    /// Attaches the analytic x-derivative: `K_x` for a general kernel,
    /// `b_x` for a separable one. Has no effect on [`Kernel::Zero`].
    pub fn with_derivative(self, d: impl Fn(&[f64], f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        match self {
            Kernel::Zero => Kernel::Zero,
            Kernel::General { k, .. } => Kernel::General { k, k_x: Some(Arc::new(d)) },
            Kernel::Separable { a, b, .. } => Kernel::Separable {
                a,
                b,
                // the separable derivative ignores the `t` slot
                b_x: Some(Arc::new(move |th: &[f64], s: f64, x: f64| d(th, 0.0, s, x))),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }

    pub fn eval(&self, theta: &[f64], t: f64, s: f64, x: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::General { k, .. } => k(theta, t, s, x),
            Kernel::Separable { a, b, .. } => a(theta, t) * b(theta, s, x),
        }
    }

    /// `∂K/∂x`, analytic when supplied, otherwise a central difference.
    pub fn eval_x(&self, theta: &[f64], t: f64, s: f64, x: f64) -> f64 {
        match self {
            Kernel::Zero => 0.0,
            Kernel::General { k, k_x } => match k_x {
                Some(d) => d(theta, t, s, x),
                None => central_diff(|y| k(theta, t, s, y), x),
            },
            Kernel::Separable { a, .. } => a(theta, t) * self.inner_x(theta, s, x),
        }
    }

    /// `∂b/∂x` for a separable kernel; zero otherwise.
    pub(crate) fn inner_x(&self, theta: &[f64], s: f64, x: f64) -> f64 {
        match self {
            Kernel::Separable { b, b_x, .. } => match b_x {
                Some(d) => d(theta, s, x),
                None => central_diff(|y| b(theta, s, y), x),
            },
            _ => 0.0,
        }
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Kernel::Zero => "Zero",
            Kernel::General { .. } => "General",
            Kernel::Separable { .. } => "Separable",
        };
        f.write_str(name)
    }
}

/// Central difference in `x` with step `1e-6·max(1, |x|)`.
pub(crate) fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-6 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// The drift model `S_t(θ, X) = V(θ,t,X_t) + ∫_0^t K(θ,t,s,X_s) ds` together
/// with the initial state, horizon and parameter box.
#[derive(Clone)]
pub struct ModelSpec {
    dim: usize,
    drift: PointFn,
    drift_x: Option<PointFn>,
    kernel: Kernel,
    x0: f64,
    horizon: f64,
    theta_box: ParamBox,
}

impl ModelSpec {
    pub fn new(
        drift: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static,
        x0: f64,
        horizon: f64,
        theta_box: ParamBox,
    ) -> Result<Self> {
        if !x0.is_finite() {
            return Err(Error::invalid("x0 must be finite"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(ModelSpec {
            dim: theta_box.dim(),
            drift: Arc::new(drift),
            drift_x: None,
            kernel: Kernel::Zero,
            x0,
            horizon,
            theta_box,
        })
    }

    pub fn with_drift_x(mut self, d: impl Fn(&[f64], f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift_x = Some(Arc::new(d));
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_theta_box(mut self, theta_box: ParamBox) -> Result<Self> {
        if theta_box.dim() != self.dim {
            return Err(Error::invalid(format!(
                "box has dimension {}, model has {}",
                theta_box.dim(),
                self.dim
            )));
        }
        self.theta_box = theta_box;
        Ok(self)
    }

    /// Drops analytic derivatives so that the finite-difference fallback is used.
    pub fn without_derivatives(mut self) -> Self {
        self.drift_x = None;
        self.kernel = match self.kernel {
            Kernel::General { k, .. } => Kernel::General { k, k_x: None },
            Kernel::Separable { a, b, .. } => Kernel::Separable { a, b, b_x: None },
            Kernel::Zero => Kernel::Zero,
        };
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn theta_box(&self) -> &ParamBox {
        &self.theta_box
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    #[inline]
    pub fn drift(&self, theta: &[f64], t: f64, x: f64) -> f64 {
        (self.drift)(theta, t, x)
    }

    pub fn drift_x(&self, theta: &[f64], t: f64, x: f64) -> f64 {
        match &self.drift_x {
            Some(d) => d(theta, t, x),
            None => central_diff(|y| (self.drift)(theta, t, y), x),
        }
    }

    pub(crate) fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::invalid(format!(
                "θ has {} coordinates, model expects {}",
                theta.len(),
                self.dim
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("θ must be finite"));
        }
        Ok(())
    }

    pub(crate) fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(Error::invalid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("kernel", &self.kernel)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("theta_box", &self.theta_box)
            .finish_non_exhaustive()
    }
}

/// Exact solution `x_t(θ)` and its θ-gradient, for oracle tests.
#[derive(Clone, Copy)]
pub struct ClosedForm {
    pub path: fn(&[f64], f64) -> f64,
    pub sensitivity: fn(&[f64], f64) -> Vec<f64>,
}

#[derive(Clone)]
pub struct BuiltinModel {
    pub name: &'static str,
    pub spec: ModelSpec,
    pub closed_form: Option<ClosedForm>,
}

impl fmt::Debug for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BuiltinModel")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("closed_form", &self.closed_form.is_some())
            .finish()
    }
}

const BUILTIN_NAMES: [&str; 5] = ["CM1", "LM1", "SM1", "KM1", "LG1"];

pub fn builtin_names() -> &'static [&'static str] {
    &BUILTIN_NAMES
}

/// Looks up a registered model by name.
///
/// * `CM1`: `dx = θ1 dt`, x0 = 0.
/// * `LM1`: `dx = θ1·x dt`, x0 = 1.
/// * `SM1`: `dx = (θ1 + θ2·t) dt`, x0 = 0.
/// * `KM1`: `dx = (−θ1·x + ∫_0^t θ2·x_s ds) dt`, x0 = 1.
/// * `LG1`: logistic `dx = θ1·x(1 − x) dt`, x0 = 1/2, no analytic `V_x`.
///
/// All have horizon `T = 1`.
pub fn builtin(name: &str) -> Result<BuiltinModel> {
    let cube = |p, lo, hi| ParamBox::cube(p, lo, hi).expect("static box");
    let model = match name {
        "CM1" => BuiltinModel {
            name: "CM1",
            spec: ModelSpec::new(|th, _, _| th[0], 0.0, 1.0, cube(1, -2.0, 2.0))?
                .with_drift_x(|_, _, _| 0.0),
            closed_form: Some(ClosedForm {
                path: |th, t| th[0] * t,
                sensitivity: |_, t| vec![t],
            }),
        },
        "LM1" => BuiltinModel {
            name: "LM1",
            spec: ModelSpec::new(|th, _, x| th[0] * x, 1.0, 1.0, cube(1, -2.0, 2.0))?
                .with_drift_x(|th, _, _| th[0]),
            closed_form: Some(ClosedForm {
                path: |th, t| (th[0] * t).exp(),
                sensitivity: |th, t| vec![t * (th[0] * t).exp()],
            }),
        },
        "SM1" => BuiltinModel {
            name: "SM1",
            spec: ModelSpec::new(|th, t, _| th[0] + th[1] * t, 0.0, 1.0, cube(2, -5.0, 5.0))?
                .with_drift_x(|_, _, _| 0.0),
            closed_form: Some(ClosedForm {
                path: |th, t| th[0] * t + 0.5 * th[1] * t * t,
                sensitivity: |_, t| vec![t, 0.5 * t * t],
            }),
        },
        "KM1" => BuiltinModel {
            name: "KM1",
            spec: ModelSpec::new(|th, _, x| -th[0] * x, 1.0, 1.0, cube(2, -2.0, 2.0))?
                .with_drift_x(|th, _, _| -th[0])
                .with_kernel(Kernel::separable(|th, _| th[1], |_, _, x| x).with_derivative(|_, _, _, _| 1.0)),
            closed_form: None,
        },
        "LG1" => BuiltinModel {
            name: "LG1",
            spec: ModelSpec::new(|th, _, x| th[0] * x * (1.0 - x), 0.5, 1.0, cube(1, -2.0, 3.0))?,
            closed_form: Some(ClosedForm {
                path: |th, t| 1.0 / (1.0 + (-th[0] * t).exp()),
                sensitivity: |th, t| {
                    let e = (-th[0] * t).exp();
                    vec![t * e / ((1.0 + e) * (1.0 + e))]
                },
            }),
        },
        other => return Err(Error::NotFound(format!("no builtin model named {other:?}"))),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_points() {
        let g = build_time_grid(1.0, 4).unwrap();
        assert_eq!(g.points(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(build_time_grid(2.0, 2).unwrap().step(), 1.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(build_time_grid(0.0, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_time_grid(-1.0, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_time_grid(1.0, 1), Err(Error::InvalidArgument(_))));
        assert!(build_time_grid(f64::NAN, 10).is_err());
    }

    #[test]
    fn grid_last_node_is_horizon() {
        for &(t, n) in &[(0.1, 3), (0.7, 7), (3.3, 1000)] {
            let g = build_time_grid(t, n).unwrap();
            let pts = g.points();
            assert_eq!(*pts.last().unwrap(), t);
            assert!(pts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn trapezoid_weights() {
        let m = lebesgue_measure(&build_time_grid(1.0, 4).unwrap());
        assert_eq!(m.weights(), &[0.125, 0.25, 0.25, 0.25, 0.125]);
        let m = lebesgue_measure(&build_time_grid(2.0, 2).unwrap());
        assert_eq!(m.weights(), &[0.5, 1.0, 0.5]);
    }

    #[test]
    fn custom_measure_validation() {
        let g = build_time_grid(1.0, 2).unwrap();
        assert!(Measure::from_weights(&g, vec![0.0, 1.0, 0.0]).is_ok());
        assert!(Measure::from_weights(&g, vec![0.0, 1.0]).is_err());
        assert!(Measure::from_weights(&g, vec![0.0, -1.0, 2.0]).is_err());
        assert!(Measure::from_weights(&g, vec![0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn registry() {
        let cm1 = builtin("CM1").unwrap();
        assert_eq!(cm1.spec.dim(), 1);
        assert_eq!(cm1.spec.x0(), 0.0);
        let sm1 = builtin("SM1").unwrap();
        let cf = sm1.closed_form.unwrap();
        assert_eq!((cf.path)(&[1.0, 0.0], 1.0), 1.0);
        assert!(matches!(builtin("nope"), Err(Error::NotFound(_))));
        for name in builtin_names() {
            assert_eq!(builtin(name).unwrap().name, *name);
        }
        let mut names = builtin_names().to_vec();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), builtin_names().len());
    }

    #[test]
    fn closed_forms_solve_their_odes() {
        // d/dt of the closed form, by central difference, equals the drift
        for name in ["CM1", "LM1", "SM1", "LG1"] {
            let m = builtin(name).unwrap();
            let cf = m.closed_form.unwrap();
            let theta = vec![0.7; m.spec.dim()];
            assert_abs_diff_eq!((cf.path)(&theta, 0.0), m.spec.x0(), epsilon = 1e-15);
            for &t in &[0.1, 0.4, 0.9] {
                let h = 1e-6;
                let dxdt = ((cf.path)(&theta, t + h) - (cf.path)(&theta, t - h)) / (2.0 * h);
                let x = (cf.path)(&theta, t);
                assert_abs_diff_eq!(dxdt, m.spec.drift(&theta, t, x), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let lg = builtin("LG1").unwrap().spec;
        for &x in &[0.1, 0.5, 2.0, -3.0] {
            // V = θx(1-x), V_x = θ(1-2x)
            assert_abs_diff_eq!(lg.drift_x(&[1.3], 0.0, x), 1.3 * (1.0 - 2.0 * x), epsilon = 1e-7);
        }
        let km = builtin("KM1").unwrap().spec;
        let bare = km.clone().without_derivatives();
        assert_abs_diff_eq!(
            km.kernel().eval_x(&[0.3, 0.8], 0.5, 0.2, 1.7),
            bare.kernel().eval_x(&[0.3, 0.8], 0.5, 0.2, 1.7),
            epsilon = 1e-8
        );
    }

    #[test]
    fn box_checks() {
        let b = ParamBox::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(b.contains(&[0.0, 2.0]));
        assert!(!b.contains_interior(&[0.0, 2.0]));
        assert!(!b.contains(&[0.0]));
        let mut th = [5.0, -5.0];
        b.clamp_in_place(&mut th);
        assert_eq!(th, [1.0, 0.0]);
        assert!(ParamBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
