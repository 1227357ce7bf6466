//! Gaussian kernel density estimation onto a grid.

use super::empirical::EmpiricalMeasure;
use super::gaussian::normal_cdf;
use super::grid::{GridDensity1D, GridSpec};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

/// Mass allowed to fall off the grid before estimation is refused.
pub const KDE_LOST_MASS_TOL: f64 = 1e-6;

/// Kernel support in bandwidths; the Gaussian tail beyond this is below 1e-15.
const KERNEL_CUTOFF: f64 = 8.0;

/// Silverman-style default `N^{-1/5} · σ̂` with `N` the effective sample size.
pub fn default_bandwidth(mu: &EmpiricalMeasure) -> f64 {
    let m = mu.moments();
    let sd = m.variance_1d().max(0.0).sqrt();
    let n = mu.effective_size();
    let h = n.powf(-0.2) * sd;
    if h > 0.0 {
        h
    } else {
        // degenerate cloud; fall back to a bandwidth relative to the location scale
        1e-3 * (1.0 + m.mean[0].abs())
    }
}

/// Gaussian KDE with exact cell averages of each kernel (differences of the
/// normal CDF at cell edges), renormalized so `dx · Σ = 1`.
pub fn kde_density(mu: &EmpiricalMeasure, grid: &GridSpec, bandwidth: f64) -> Result<GridDensity1D> {
    kde_density_with(mu, grid, bandwidth, Execution::Parallel)
}

pub fn kde_density_with(
    mu: &EmpiricalMeasure,
    grid: &GridSpec,
    bandwidth: f64,
    exec: Execution,
) -> Result<GridDensity1D> {
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: mu.dim() });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
    }
    let (lo, hi) = (grid.x_min, grid.x_max());
    let lost: f64 = mu
        .iter()
        .map(|(x, w)| w * (normal_cdf((lo - x[0]) / bandwidth) + normal_cdf((x[0] - hi) / bandwidth)))
        .sum();
    if lost > KDE_LOST_MASS_TOL {
        return Err(Error::GridTooSmall { lost_mass: lost });
    }
    // Accumulate per block of atoms, then add blocks in index order.
    const BLOCK: usize = 2048;
    let n = mu.len();
    let blocks = n.div_ceil(BLOCK);
    let partial = map_indexed(exec, blocks, |b| {
        let mut acc = vec![0.0; grid.n];
        for k in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let (y, w) = (mu.point(k)[0], mu.weights()[k]);
            if w == 0.0 {
                continue;
            }
            let first = ((y - KERNEL_CUTOFF * bandwidth - lo) / grid.dx).floor().max(0.0) as usize;
            let last = (((y + KERNEL_CUTOFF * bandwidth - lo) / grid.dx).ceil().max(0.0) as usize).min(grid.n);
            if first >= last {
                continue;
            }
            let mut left = normal_cdf((lo + first as f64 * grid.dx - y) / bandwidth);
            for (i, a) in acc.iter_mut().enumerate().take(last).skip(first) {
                let right = normal_cdf((lo + (i + 1) as f64 * grid.dx - y) / bandwidth);
                *a += w * (right - left);
                left = right;
            }
        }
        acc
    });
    let mut values = vec![0.0; grid.n];
    for p in partial {
        for (v, a) in values.iter_mut().zip(p) {
            *v += a;
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0) / grid.dx);
    GridDensity1D::normalized(*grid, values)
}

/// Binned Gaussian KDE on a fixed grid: linear binning of the particles
/// followed by a discrete convolution with the cell-averaged kernel. Cost is
/// O(N + M·K) per estimate, which is what the particle simulator needs at
/// every time step. Bin counts are accumulated in fixed point, so the result
/// does not depend on particle order.
#[derive(Clone, Debug)]
pub struct BinnedKde {
    grid: GridSpec,
    bandwidth: f64,
    kernel: Vec<f64>,
}

impl BinnedKde {
    pub fn new(grid: GridSpec, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be positive")));
        }
        let half = ((KERNEL_CUTOFF * bandwidth / grid.dx).ceil() as usize).max(1);
        let mut kernel: Vec<f64> = (0..=2 * half)
            .map(|k| {
                let off = k as f64 - half as f64;
                normal_cdf((off + 0.5) * grid.dx / bandwidth) - normal_cdf((off - 0.5) * grid.dx / bandwidth)
            })
            .collect();
        let s: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= s);
        Ok(Self { grid, bandwidth, kernel })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Estimate from uniformly weighted 1-D positions.
    pub fn estimate(&self, positions: &[f64], exec: Execution) -> Result<GridDensity1D> {
        const SCALE: f64 = (1u64 << 52) as f64;
        let g = &self.grid;
        let mut bins = vec![0i128; g.n];
        let mut lost = 0usize;
        let first_center = g.center(0);
        for &x in positions {
            let f = (x - first_center) / g.dx;
            if !(f > -0.5 && f < g.n as f64 - 0.5) {
                lost += 1;
                continue;
            }
            let fl = f.floor();
            let frac = f - fl;
            let upper = (frac * SCALE).round() as i128;
            let lower = (1i128 << 52) - upper;
            let i = fl as i64;
            if i >= 0 {
                bins[i as usize] += lower;
            }
            if (i + 1) < g.n as i64 {
                bins[(i + 1) as usize] += upper;
            }
        }
        let lost_mass = lost as f64 / positions.len() as f64;
        if lost_mass > KDE_LOST_MASS_TOL {
            return Err(Error::GridTooSmall { lost_mass });
        }
        let counts: Vec<f64> = bins.iter().map(|&b| b as f64 / SCALE).collect();
        let half = (self.kernel.len() - 1) / 2;
        let values = map_indexed(exec, g.n, |i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(g.n - 1);
            (lo..=hi).map(|j| counts[j] * self.kernel[j + half - i]).sum::<f64>()
        });
        GridDensity1D::normalized(*g, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::gaussian::normal_pdf;
    use crate::rng::{normal, stream};

    #[test]
    fn single_atom_gives_discretized_gaussian() {
        let g = GridSpec::centered(2.0, 0.01).unwrap();
        let h = 0.2;
        let rho = kde_density(&EmpiricalMeasure::dirac(&[0.0]), &g, h).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-10);
        let expected = GridDensity1D::gaussian(g, 0.0, h * h).unwrap();
        assert!(rho.l1_distance(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn two_atoms_give_a_bimodal_symmetric_density() {
        let g = GridSpec::centered(3.0, 0.01).unwrap();
        let mu = EmpiricalMeasure::from_atoms_1d(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let rho = kde_density(&mu, &g, 0.1).unwrap();
        let at = |x: f64| rho.value_at(x);
        assert!(at(0.0) < at(1.0) && at(0.0) < at(-1.0));
        // oracle: direct evaluation of the mixture density
        let mix = |x: f64| 0.5 * (normal_pdf((x + 1.0) / 0.1) + normal_pdf((x - 1.0) / 0.1)) / 0.1;
        assert!((at(1.0) - mix(1.0)).abs() / mix(1.0) < 1e-2);
        let n = g.n;
        for i in 0..n {
            assert!((rho.values()[i] - rho.values()[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn refuses_grids_that_lose_mass() {
        let g = GridSpec::new(0.0, 0.01, 100).unwrap();
        let mu = EmpiricalMeasure::dirac(&[0.5]);
        assert!(matches!(kde_density(&mu, &g, 0.5), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn binned_estimate_tracks_exact_estimate() {
        let g = GridSpec::centered(6.0, 0.01).unwrap();
        let mut rng = stream(5, 0);
        let xs: Vec<f64> = (0..5000).map(|_| normal(&mut rng)).collect();
        let mu = EmpiricalMeasure::uniform(1, xs.clone()).unwrap();
        let h = default_bandwidth(&mu);
        let exact = kde_density(&mu, &g, h).unwrap();
        let binned = BinnedKde::new(g, h).unwrap().estimate(&xs, Execution::Parallel).unwrap();
        assert!(exact.l1_distance(&binned).unwrap() < 5e-3);
    }

    #[test]
    fn binned_estimate_is_permutation_invariant() {
        let g = GridSpec::centered(6.0, 0.02).unwrap();
        let mut rng = stream(9, 0);
        let xs: Vec<f64> = (0..1000).map(|_| normal(&mut rng)).collect();
        let mut ys = xs.clone();
        ys.reverse();
        let k = BinnedKde::new(g, 0.3).unwrap();
        let a = k.estimate(&xs, Execution::Sequential).unwrap();
        let b = k.estimate(&ys, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
