//! Penalized (Bridge/Lasso-type) minimum-distance estimation for the drift
//! parameters of small-noise dynamical systems
//!
//! ```text
//! dX_t = ( V(θ,t,X_t) + ∫_0^t K(θ,t,s,X_s) ds ) dt + ε dW_t,   X_0 = x0
//! ```
//!
//! The estimator minimizes `‖X − x(θ)‖_{L2(μ)} + λ Σ_j |θ_j|^γ` over a box,
//! where `x(θ)` solves the noise-free integro-differential system. Alongside
//! the estimator the crate builds the asymptotic objects (Fisher information,
//! the Gaussian vector ζ, the limit objectives V(u) and their minimizers) and
//! a seeded Monte Carlo harness that compares finite-ε estimates against them.

pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod limit_law;
pub mod metric;
pub mod model;
pub mod montecarlo;
mod optim;
pub mod stats;
pub mod streams;

pub use dynamics::{
    simulate_first_order, simulate_sde, solve_limit_ode, solve_sensitivity,
    SensitivityTrajectory, Trajectory,
};
pub use error::{Error, Result};
pub use estimator::{
    contrast, grid_oracle, minimize_contrast, penalty, EstimateResult, LambdaRule,
    OptimizerConfig, PenaltyConfig,
};
pub use limit_law::{
    fisher_info, limit_objective, minimize_limit_objective, sample_limit_distribution,
    sample_zeta, FisherInfo, LimitLawSpec, Regime, ZetaSample, ZetaSampler,
};
pub use metric::{l2_distance, l2_norm};
pub use model::{
    build_time_grid, builtin, builtin_names, lebesgue_measure, BuiltinModel, Kernel, Measure, ModelSpec,
    ParamBox, TimeGrid,
};
