//! `L2(μ)` norm and distance on grid nodes.

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::model::Measure;

fn check_grid(f: &Trajectory, mu: &Measure) -> Result<()> {
    if f.grid() != mu.grid() {
        return Err(Error::invalid("trajectory and measure live on different grids"));
    }
    Ok(())
}

/// `(Σ_k w_k f_k²)^{1/2}`
pub fn l2_norm(f: &Trajectory, mu: &Measure) -> Result<f64> {
    check_grid(f, mu)?;
    Ok(weighted_sq(f.values().iter().copied(), mu.weights()).sqrt())
}

pub fn l2_distance(f: &Trajectory, g: &Trajectory, mu: &Measure) -> Result<f64> {
    check_grid(f, mu)?;
    check_grid(g, mu)?;
    Ok(distance_values(f.values(), g.values(), mu.weights()))
}

/// Distance on raw node values; lengths must already agree.
pub(crate) fn distance_values(f: &[f64], g: &[f64], weights: &[f64]) -> f64 {
    weighted_sq(f.iter().zip(g).map(|(a, b)| a - b), weights).sqrt()
}

fn weighted_sq(values: impl Iterator<Item = f64>, weights: &[f64]) -> f64 {
    values.zip(weights).map(|(v, w)| w * v * v).sum()
}
