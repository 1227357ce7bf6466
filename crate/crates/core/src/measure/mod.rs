//! Probability measures on ℝᵈ: weighted particle clouds, cell-averaged grid
//! densities, conversions between them, and Wasserstein distances.

mod empirical;
pub mod gaussian;
mod grid;
pub mod io;
pub mod kde;
pub mod wasserstein;

pub use empirical::{EmpiricalMeasure, Moments, WEIGHT_SUM_TOL};
pub use grid::{GridDensity1D, GridSpec, Mollifier, GRID_MASS_TOL};
pub use kde::{default_bandwidth, kde_density, BinnedKde};
pub use wasserstein::{
    optimal_plan_1d, sinkhorn, wasserstein2, wasserstein2_cloud_grid, wasserstein2_grids, QuantileFn,
    SinkhornConfig, TransportPlan, W2Method,
};

/// Borrowed view of either measure representation.
#[derive(Clone, Copy, Debug)]
pub enum Law<'a> {
    Cloud(&'a EmpiricalMeasure),
    Grid(&'a GridDensity1D),
}

impl<'a> Law<'a> {
    pub fn dim(&self) -> usize {
        match self {
            Law::Cloud(m) => m.dim(),
            Law::Grid(_) => 1,
        }
    }

    /// `∫ f dμ` (midpoint quadrature for grids).
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        match self {
            Law::Cloud(m) => m.integrate(f),
            Law::Grid(g) => g.integrate(|x| f(&[x])),
        }
    }

    pub fn moments(&self) -> Moments {
        match self {
            Law::Cloud(m) => m.moments(),
            Law::Grid(g) => {
                let mean = g.mean();
                let var = g.variance();
                Moments { mean: vec![mean], covariance: vec![var], second_moment: var + mean * mean }
            }
        }
    }

    /// Atoms with positive weight, for pointwise loops.
    pub fn atoms(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            Law::Cloud(m) => m.iter().map(|(x, w)| (x.to_vec(), w)).collect(),
            Law::Grid(g) => g
                .values()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(i, v)| (vec![g.grid().center(i)], v * g.dx()))
                .collect(),
        }
    }
}

impl<'a> From<&'a EmpiricalMeasure> for Law<'a> {
    fn from(m: &'a EmpiricalMeasure) -> Self {
        Law::Cloud(m)
    }
}

impl<'a> From<&'a GridDensity1D> for Law<'a> {
    fn from(g: &'a GridDensity1D) -> Self {
        Law::Grid(g)
    }
}
