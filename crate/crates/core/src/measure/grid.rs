use rand::Rng;
use serde::{Deserialize, Serialize};

use super::empirical::EmpiricalMeasure;
use super::gaussian::normal_cdf;
use crate::error::{Error, Result};

/// Tolerance on `dx · Σ values`.
pub const GRID_MASS_TOL: f64 = 1e-10;

/// Uniform 1-D grid: `n` cells of width `dx`, the first starting at `x_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub dx: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, dx: f64, n: usize) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) || n == 0 || !x_min.is_finite() {
            return Err(Error::InvalidArgument(format!("bad grid x_min={x_min} dx={dx} n={n}")));
        }
        Ok(Self { x_min, dx, n })
    }

    /// Odd number of cells covering at least `[-half_width, half_width]`,
    /// with a cell centered exactly at 0.
    pub fn centered(half_width: f64, dx: f64) -> Result<Self> {
        let half = (half_width / dx - 0.5).ceil().max(0.0) as usize;
        let n = 2 * half + 1;
        Self::new(-(n as f64) * dx / 2.0, dx, n)
    }

    /// Cells covering `[lo, hi]` with spacing close to `dx` (adjusted to fit exactly).
    pub fn covering(lo: f64, hi: f64, dx: f64) -> Result<Self> {
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("empty interval [{lo}, {hi}]")));
        }
        let n = ((hi - lo) / dx).ceil().max(1.0) as usize;
        Self::new(lo, (hi - lo) / n as f64, n)
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.n as f64 * self.dx
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// Index of the cell containing `x`; `None` outside the grid.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x < self.x_max()) {
            return None;
        }
        Some((((x - self.x_min) / self.dx) as usize).min(self.n - 1))
    }

    pub fn nearest_cell(&self, x: f64) -> usize {
        let f = ((x - self.x_min) / self.dx - 0.5).round();
        f.clamp(0.0, (self.n - 1) as f64) as usize
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.n == other.n
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.x_min - other.x_min).abs() <= 1e-9 * self.dx
    }
}

/// How a point mass is spread onto grid cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mollifier {
    /// Mass split linearly between the two nearest cell centers (one cell if
    /// the point is a center). Preserves the mean exactly.
    #[default]
    Linear,
    /// Hat of weights ¼, ½, ¼ centered at the nearest cell.
    Hat3,
}

impl Mollifier {
    pub fn width(self, dx: f64) -> f64 {
        match self {
            Mollifier::Linear => dx,
            Mollifier::Hat3 => 2.0 * dx,
        }
    }
}

/// Cell-averaged probability density on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity1D {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridDensity1D {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::InvalidMeasure(format!(
                "{} values for a grid of {} cells",
                values.len(),
                grid.n
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("invalid density value {v}")));
        }
        let mass = grid.dx * values.iter().sum::<f64>();
        if (mass - 1.0).abs() > GRID_MASS_TOL {
            return Err(Error::InvalidMeasure(format!("grid density has mass {mass}")));
        }
        Ok(Self { grid, values })
    }

    /// Normalizes nonnegative cell values to unit mass.
    pub fn normalized(grid: GridSpec, mut values: Vec<f64>) -> Result<Self> {
        let mass = grid.dx * values.iter().sum::<f64>();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidMeasure(format!("cannot normalize mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, values)
    }

    /// Used by solvers that maintain the invariants themselves.
    pub(crate) fn from_parts_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n);
        Self { grid, values }
    }

    /// Exact cell averages of N(mean, var), renormalized to the grid.
    pub fn gaussian(grid: GridSpec, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) {
            return Err(Error::InvalidArgument(format!("gaussian variance {var} must be positive")));
        }
        let sd = var.sqrt();
        let z: Vec<f64> = (0..=grid.n).map(|i| (grid.x_min + i as f64 * grid.dx - mean) / sd).collect();
        // differences of the smaller tail keep precision on both sides
        let values = z
            .windows(2)
            .map(|w| {
                let m = if w[0] + w[1] > 0.0 { normal_cdf(-w[0]) - normal_cdf(-w[1]) } else { normal_cdf(w[1]) - normal_cdf(w[0]) };
                m.max(0.0) / grid.dx
            })
            .collect();
        Self::normalized(grid, values)
    }

    /// Cell averages of a density function by 3-point Gauss–Legendre per cell.
    pub fn from_pdf<F: Fn(f64) -> f64>(grid: GridSpec, pdf: F) -> Result<Self> {
        const NODES: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
        const WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
        let values = (0..grid.n)
            .map(|i| {
                let c = grid.center(i);
                let avg: f64 = NODES
                    .iter()
                    .zip(WEIGHTS)
                    .map(|(z, w)| w * pdf(c + 0.5 * grid.dx * z))
                    .sum::<f64>()
                    / 2.0;
                avg.max(0.0)
            })
            .collect();
        Self::normalized(grid, values)
    }

    pub fn uniform_on(grid: GridSpec) -> Self {
        let v = 1.0 / (grid.n as f64 * grid.dx);
        Self { grid, values: vec![v; grid.n] }
    }

    /// Grid approximation of δₓ.
    pub fn dirac(grid: GridSpec, x: f64, mollifier: Mollifier) -> Result<Self> {
        if !(x >= grid.x_min && x <= grid.x_max()) {
            return Err(Error::GridTooSmall { lost_mass: 1.0 });
        }
        let mut values = vec![0.0; grid.n];
        let inv = 1.0 / grid.dx;
        match mollifier {
            Mollifier::Linear => {
                let f = ((x - grid.x_min) / grid.dx - 0.5).clamp(0.0, (grid.n - 1) as f64);
                let i = f.floor() as usize;
                let frac = f - i as f64;
                if frac == 0.0 || i + 1 >= grid.n {
                    values[i] = inv;
                } else {
                    values[i] = (1.0 - frac) * inv;
                    values[i + 1] = frac * inv;
                }
            }
            Mollifier::Hat3 => {
                let i = grid.nearest_cell(x);
                if i == 0 || i + 1 >= grid.n {
                    return Err(Error::GridTooSmall { lost_mass: 0.25 });
                }
                values[i - 1] = 0.25 * inv;
                values[i] = 0.5 * inv;
                values[i + 1] = 0.25 * inv;
            }
        }
        Self::normalized(grid, values)
    }

    /// Cloud-in-cell projection of a 1-D measure: each atom's mass is split
    /// linearly between its two nearest cell centers, which preserves the
    /// mean of atoms lying between the first and last centers.
    pub fn deposit(grid: GridSpec, mu: &EmpiricalMeasure) -> Result<Self> {
        if mu.dim() != 1 {
            return Err(Error::DimensionMismatch { expected: 1, got: mu.dim() });
        }
        let mut values = vec![0.0; grid.n];
        let mut lost = 0.0;
        let last = (grid.n - 1) as f64;
        for (x, w) in mu.iter() {
            let x = x[0];
            if !(x >= grid.x_min && x <= grid.x_max()) {
                lost += w;
                continue;
            }
            let f = ((x - grid.x_min) / grid.dx - 0.5).clamp(0.0, last);
            let i = f.floor() as usize;
            let frac = f - i as f64;
            values[i] += (1.0 - frac) * w;
            if frac > 0.0 {
                values[i + 1] += frac * w;
            }
        }
        if lost > GRID_MASS_TOL {
            return Err(Error::GridTooSmall { lost_mass: lost });
        }
        let inv = 1.0 / grid.dx;
        values.iter_mut().for_each(|v| *v *= inv);
        Self::normalized(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dx(&self) -> f64 {
        self.grid.dx
    }

    pub fn mass(&self) -> f64 {
        self.grid.dx * self.values.iter().sum::<f64>()
    }

    /// Density value at `x` by cell lookup; zero off the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        self.grid.cell_of(x).map_or(0.0, |i| self.values[i])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Midpoint-rule integral of `f` against the density.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let dx = self.grid.dx;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| v * dx * f(self.grid.center(i)))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|x| (x - m) * (x - m))
    }

    pub fn l1_distance(&self, other: &GridDensity1D) -> Result<f64> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch("L1 distance needs identical grids".into()));
        }
        Ok(self.grid.dx * self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// `(1-θ)·a + θ·b` on a shared grid.
    pub fn interpolate(a: &GridDensity1D, b: &GridDensity1D, theta: f64) -> Result<GridDensity1D> {
        if !a.grid.same_as(&b.grid) {
            return Err(Error::GridMismatch("cannot interpolate densities on different grids".into()));
        }
        if theta == 0.0 {
            return Ok(a.clone());
        }
        if theta == 1.0 {
            return Ok(b.clone());
        }
        let values = a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - theta) * x + theta * y).collect();
        Ok(Self { grid: a.grid, values })
    }

    /// Cell centers become atoms with weights `value · dx`.
    pub fn to_measure(&self) -> EmpiricalMeasure {
        let weights: Vec<f64> = self.values.iter().map(|v| v * self.grid.dx).collect();
        EmpiricalMeasure::normalized(1, self.grid.centers(), weights).expect("valid grid density")
    }

    /// Inverse-CDF sampling from the piecewise-constant density.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<EmpiricalMeasure> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let dx = self.grid.dx;
        let mut cdf = Vec::with_capacity(self.grid.n);
        let mut acc = 0.0;
        for v in &self.values {
            acc += v * dx;
            cdf.push(acc);
        }
        let points = (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let mut i = cdf.partition_point(|&c| c <= u).min(self.grid.n - 1);
                // never land in an empty cell
                while self.values[i] == 0.0 && i > 0 {
                    i -= 1;
                }
                let below = if i == 0 { 0.0 } else { cdf[i - 1] };
                let cell_mass = self.values[i] * dx;
                let frac = if cell_mass > 0.0 { ((u - below) / cell_mass).clamp(0.0, 1.0) } else { 0.5 };
                self.grid.x_min + (i as f64 + frac) * dx
            })
            .collect();
        EmpiricalMeasure::uniform(1, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn centered_grid_has_center_at_zero() {
        let g = GridSpec::centered(1.0, 0.1).unwrap();
        assert_eq!(g.n % 2, 1);
        assert!(g.center(g.n / 2).abs() < 1e-12);
        assert!(g.x_min <= -1.0 && g.x_max() >= 1.0);
    }

    #[test]
    fn grid_to_measure_moments_of_gaussian() {
        let g = GridSpec::covering(2.0 - 15.0, 2.0 + 15.0, 0.05).unwrap();
        let rho = GridDensity1D::gaussian(g, 2.0, 3.0).unwrap();
        let m = rho.to_measure().moments();
        assert!((m.mean[0] - 2.0).abs() <= g.dx * g.dx);
        assert!((m.variance_1d() - 3.0).abs() <= g.dx * g.dx);
    }

    #[test]
    fn uniform_samples_lie_in_unit_interval() {
        let g = GridSpec::new(0.0, 0.25, 4).unwrap();
        let rho = GridDensity1D::uniform_on(g);
        let s = rho.sample(4, &mut stream(1, 0)).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.points().iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(s.weights().iter().all(|&w| w == 0.25));
    }

    #[test]
    fn dirac_like_density_samples_stay_in_its_cell() {
        let g = GridSpec::new(-1.0, 0.1, 20).unwrap();
        let mut v = vec![0.0; 20];
        v[7] = 10.0;
        let rho = GridDensity1D::new(g, v).unwrap();
        let s = rho.sample(50, &mut stream(3, 0)).unwrap();
        let (lo, hi) = (g.x_min + 0.7, g.x_min + 0.8);
        assert!(s.points().iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn gaussian_sampling_moments() {
        let g = GridSpec::centered(8.0, 0.01).unwrap();
        let rho = GridDensity1D::gaussian(g, 0.0, 1.0).unwrap();
        let s = rho.sample(100_000, &mut stream(11, 0)).unwrap();
        let m = s.moments();
        assert!(m.mean[0].abs() < 0.02, "mean {}", m.mean[0]);
        assert!((m.variance_1d() - 1.0).abs() < 0.03, "var {}", m.variance_1d());
    }

    #[test]
    fn dirac_mollifiers_preserve_mean() {
        let g = GridSpec::centered(2.0, 0.1).unwrap();
        for x in [0.0, 0.03, -0.77] {
            let d = GridDensity1D::dirac(g, x, Mollifier::Linear).unwrap();
            assert!((d.mean() - x).abs() < 1e-12);
            assert!((d.mass() - 1.0).abs() < 1e-12);
        }
        let h = GridDensity1D::dirac(g, 0.0, Mollifier::Hat3).unwrap();
        assert!(h.mean().abs() < 1e-12);
    }
}
