//! Quadratic Wasserstein distance.
//!
//! In one dimension the monotone (quantile) coupling is optimal, so 𝕎₂² is
//! computed exactly as `∫₀¹ |Q_μ(q) − Q_ν(q)|² dq` over piecewise-linear
//! quantile functions. Arbitrary dimensions use log-domain Sinkhorn.

use serde::{Deserialize, Serialize};

use super::empirical::EmpiricalMeasure;
use super::grid::GridDensity1D;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization; `None` uses 1e-2 · median squared pairwise distance.
    pub epsilon: Option<f64>,
    /// Stopping threshold on the L¹ row-marginal error.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub execution: Execution,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: None, tolerance: 1e-8, max_iterations: 10_000, execution: Execution::Parallel }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    Exact1d,
    Sinkhorn(SinkhornConfig),
}

/// A coupling π ∈ 𝒞(source, target), stored densely and row-major.
#[derive(Clone, Debug)]
pub struct TransportPlan<'a> {
    pub source: &'a EmpiricalMeasure,
    pub target: &'a EmpiricalMeasure,
    pub coupling: Vec<f64>,
}

impl TransportPlan<'_> {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.target.len() + j]
    }

    /// Largest absolute deviation of the row/column sums from the marginals.
    pub fn marginal_error(&self) -> f64 {
        let (n, m) = (self.source.len(), self.target.len());
        let mut err: f64 = 0.0;
        for i in 0..n {
            let r: f64 = (0..m).map(|j| self.get(i, j)).sum();
            err = err.max((r - self.source.weights()[i]).abs());
        }
        for j in 0..m {
            let c: f64 = (0..n).map(|i| self.get(i, j)).sum();
            err = err.max((c - self.target.weights()[j]).abs());
        }
        err
    }

    /// `Σ πᵢⱼ |xᵢ − yⱼ|²`.
    pub fn cost(&self) -> f64 {
        let m = self.target.len();
        let mut total = 0.0;
        for (k, &p) in self.coupling.iter().enumerate() {
            if p != 0.0 {
                total += p * sq_dist(self.source.point(k / m), self.target.point(k % m));
            }
        }
        total
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One linear piece of a 1-D quantile function on `[q0, q1]`.
/// `s0`, `s1` are the complementary tail masses `1 − q`, accumulated from the
/// right so that upper-tail quantiles keep full precision.
#[derive(Clone, Copy, Debug)]
pub struct QuantileSegment {
    pub q0: f64,
    pub q1: f64,
    pub s0: f64,
    pub s1: f64,
    pub x0: f64,
    pub x1: f64,
}

/// Piecewise-linear quantile function of a 1-D measure.
#[derive(Clone, Debug)]
pub struct QuantileFn {
    segments: Vec<QuantileSegment>,
}

impl QuantileFn {
    fn build(pieces: Vec<(f64, f64, f64)>) -> Self {
        // pieces: (mass, x0, x1) in increasing x order
        let n = pieces.len();
        let mut right = vec![0.0; n + 1];
        for k in (0..n).rev() {
            right[k] = right[k + 1] + pieces[k].0;
        }
        let mut segments = Vec::with_capacity(n);
        let mut q = 0.0;
        for (k, &(w, x0, x1)) in pieces.iter().enumerate() {
            segments.push(QuantileSegment { q0: q, q1: q + w, s0: right[k], s1: right[k + 1], x0, x1 });
            q += w;
        }
        Self { segments }
    }

    pub fn from_cloud(mu: &EmpiricalMeasure) -> Self {
        Self::build(mu.sorted_atoms_1d().into_iter().map(|(x, w)| (w, x, x)).collect())
    }

    pub fn from_grid(rho: &GridDensity1D) -> Self {
        let g = rho.grid();
        Self::build(
            rho.values()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v > 0.0)
                .map(|(i, v)| {
                    let l = g.x_min + i as f64 * g.dx;
                    (v * g.dx, l, l + g.dx)
                })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[QuantileSegment] {
        &self.segments
    }

    /// Exact `∫ |Q_a − Q_b|²` over the common quantile range.
    pub fn w2_squared(&self, other: &QuantileFn) -> f64 {
        let (a, b) = (&self.segments, &other.segments);
        let (mut i, mut j) = (0, 0);
        let mut q = 0.0;
        let mut total = 0.0;
        let at = |s: &QuantileSegment, q: f64| {
            let w = s.q1 - s.q0;
            if w <= 0.0 || s.x0 == s.x1 {
                s.x0
            } else {
                s.x0 + (s.x1 - s.x0) * ((q - s.q0) / w).clamp(0.0, 1.0)
            }
        };
        while i < a.len() && j < b.len() {
            let end = a[i].q1.min(b[j].q1);
            let len = end - q;
            if len > 0.0 {
                let d0 = at(&a[i], q) - at(&b[j], q);
                let d1 = at(&a[i], end) - at(&b[j], end);
                total += len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
                q = end;
            }
            if a[i].q1 <= end {
                i += 1;
            }
            if b[j].q1 <= end {
                j += 1;
            }
        }
        total
    }
}

/// 𝕎₂(μ, ν).
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, method: W2Method) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if let Some(atom) = single_support_point(mu) {
        return Ok(rms_to_point(nu, &atom));
    }
    if let Some(atom) = single_support_point(nu) {
        return Ok(rms_to_point(mu, &atom));
    }
    match method {
        W2Method::Exact1d => {
            if mu.dim() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "exact1d needs dimension 1, got {}",
                    mu.dim()
                )));
            }
            Ok(QuantileFn::from_cloud(mu).w2_squared(&QuantileFn::from_cloud(nu)).max(0.0).sqrt())
        }
        W2Method::Sinkhorn(cfg) => Ok(sinkhorn(mu, nu, &cfg)?.distance),
    }
}

pub fn wasserstein2_grids(a: &GridDensity1D, b: &GridDensity1D) -> f64 {
    QuantileFn::from_grid(a).w2_squared(&QuantileFn::from_grid(b)).max(0.0).sqrt()
}

pub fn wasserstein2_cloud_grid(mu: &EmpiricalMeasure, rho: &GridDensity1D) -> f64 {
    QuantileFn::from_cloud(mu).w2_squared(&QuantileFn::from_grid(rho)).max(0.0).sqrt()
}

fn single_support_point(mu: &EmpiricalMeasure) -> Option<Vec<f64>> {
    let mut support = mu.iter().filter(|(_, w)| *w > 0.0).map(|(x, _)| x);
    let first = support.next()?;
    support.all(|x| x == first).then(|| first.to_vec())
}

fn rms_to_point(mu: &EmpiricalMeasure, a: &[f64]) -> f64 {
    mu.integrate(|x| sq_dist(x, a)).sqrt()
}

/// Monotone coupling of two 1-D clouds (the optimal plan in one dimension).
pub fn optimal_plan_1d<'a>(
    mu: &'a EmpiricalMeasure,
    nu: &'a EmpiricalMeasure,
) -> Result<TransportPlan<'a>> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::InvalidArgument("optimal_plan_1d needs 1-D measures".into()));
    }
    let order = |m: &EmpiricalMeasure| {
        let mut idx: Vec<usize> = (0..m.len()).collect();
        idx.sort_by(|&a, &b| m.points()[a].total_cmp(&m.points()[b]));
        idx
    };
    let (ia, ib) = (order(mu), order(nu));
    let m = nu.len();
    let mut coupling = vec![0.0; mu.len() * m];
    let (mut i, mut j) = (0, 0);
    let mut ra = mu.weights()[ia[0]];
    let mut rb = nu.weights()[ib[0]];
    while i < ia.len() && j < ib.len() {
        let t = ra.min(rb);
        coupling[ia[i] * m + ib[j]] += t;
        ra -= t;
        rb -= t;
        if ra <= 1e-15 {
            i += 1;
            if i < ia.len() {
                ra = mu.weights()[ia[i]];
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < ib.len() {
                rb = nu.weights()[ib[j]];
            }
        }
    }
    Ok(TransportPlan { source: mu, target: nu, coupling })
}

#[derive(Clone, Debug)]
pub struct SinkhornOutcome<'a> {
    pub plan: TransportPlan<'a>,
    /// `sqrt(⟨π_ε, C⟩)`, the unregularized cost of the entropic plan.
    pub distance: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_error: f64,
}

impl SinkhornOutcome<'_> {
    /// Upper bound on `⟨π_ε, C⟩ − 𝕎₂²` implied by the entropy of the plan.
    pub fn entropic_gap_bound(&self) -> f64 {
        let (n, m) = (self.plan.source.len() as f64, self.plan.target.len() as f64);
        self.epsilon * (n * m).ln()
    }
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + it.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn iterations for entropically regularized OT.
pub fn sinkhorn<'a>(
    mu: &'a EmpiricalMeasure,
    nu: &'a EmpiricalMeasure,
    cfg: &SinkhornConfig,
) -> Result<SinkhornOutcome<'a>> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    let (n, m) = (mu.len(), nu.len());
    let cost: Vec<f64> = (0..n * m).map(|k| sq_dist(mu.point(k / m), nu.point(k % m))).collect();
    let epsilon = match cfg.epsilon {
        Some(e) if e > 0.0 => e,
        Some(e) => return Err(Error::InvalidArgument(format!("sinkhorn epsilon {e} must be positive"))),
        None => {
            let mut sorted = cost.clone();
            sorted.sort_by(f64::total_cmp);
            let med = sorted[sorted.len() / 2];
            let scale = if med > 0.0 { med } else { sorted.last().copied().unwrap_or(0.0) };
            if scale == 0.0 {
                // all atoms coincide
                let coupling = mu
                    .weights()
                    .iter()
                    .flat_map(|&a| nu.weights().iter().map(move |&b| a * b))
                    .collect();
                return Ok(SinkhornOutcome {
                    plan: TransportPlan { source: mu, target: nu, coupling },
                    distance: 0.0,
                    epsilon: 0.0,
                    iterations: 0,
                    marginal_error: 0.0,
                });
            }
            1e-2 * scale
        }
    };
    let log_a: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = nu.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        f = map_indexed(cfg.execution, n, |i| {
            -epsilon
                * log_sum_exp((0..m).map(|j| log_b[j] + (g[j] - cost[i * m + j]) / epsilon))
        });
        g = map_indexed(cfg.execution, m, |j| {
            -epsilon
                * log_sum_exp((0..n).map(|i| log_a[i] + (f[i] - cost[i * m + j]) / epsilon))
        });
        // columns are exact after the g-update; measure the row error
        let rows = map_indexed(cfg.execution, n, |i| {
            let s: f64 = (0..m)
                .map(|j| (log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * m + j]) / epsilon).exp())
                .sum();
            (s - mu.weights()[i]).abs()
        });
        marginal_error = rows.iter().sum();
        if marginal_error < cfg.tolerance {
            break;
        }
    }
    if marginal_error >= cfg.tolerance {
        return Err(Error::SinkhornNonConvergence { iterations, marginal_error });
    }
    let coupling: Vec<f64> = (0..n * m)
        .map(|k| {
            let (i, j) = (k / m, k % m);
            (log_a[i] + log_b[j] + (f[i] + g[j] - cost[k]) / epsilon).exp()
        })
        .collect();
    let plan = TransportPlan { source: mu, target: nu, coupling };
    let distance = plan.cost().max(0.0).sqrt();
    Ok(SinkhornOutcome { plan, distance, epsilon, iterations, marginal_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atoms(a: &[(f64, f64)]) -> EmpiricalMeasure {
        EmpiricalMeasure::from_atoms_1d(a).unwrap()
    }

    #[test]
    fn diracs_two_apart() {
        let w = wasserstein2(&atoms(&[(0.0, 1.0)]), &atoms(&[(2.0, 1.0)]), W2Method::Exact1d).unwrap();
        assert_eq!(w, 2.0);
    }

    #[test]
    fn shifted_pairs_by_exhaustive_pairing() {
        let mu = atoms(&[(0.0, 0.5), (1.0, 0.5)]);
        let nu = atoms(&[(1.0, 0.5), (2.0, 0.5)]);
        // pairings {0→1, 1→2}: cost 1; {0→2, 1→1}: cost 2
        let brute = (0.5f64 * 1.0 + 0.5 * 1.0).min(0.5 * 4.0 + 0.0).sqrt();
        let w = wasserstein2(&mu, &nu, W2Method::Exact1d).unwrap();
        assert!((w - brute).abs() < 1e-15);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let mu = atoms(&[(-0.3, 0.2), (1.7, 0.5), (4.0, 0.3)]);
        assert_eq!(wasserstein2(&mu, &mu, W2Method::Exact1d).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = EmpiricalMeasure::dirac(&[0.0]);
        let b = EmpiricalMeasure::dirac(&[0.0, 1.0]);
        assert!(matches!(wasserstein2(&a, &b, W2Method::Exact1d), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn exact1d_rejects_higher_dimensions() {
        let a = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(wasserstein2(&a, &a, W2Method::Exact1d).is_err());
    }

    #[test]
    fn monotone_plan_has_correct_marginals_and_cost() {
        let mu = atoms(&[(0.5, 0.3), (-1.0, 0.3), (2.0, 0.4)]);
        let nu = atoms(&[(0.0, 0.25), (1.0, 0.25), (3.0, 0.5)]);
        let plan = optimal_plan_1d(&mu, &nu).unwrap();
        assert!(plan.marginal_error() < 1e-12);
        let w = wasserstein2(&mu, &nu, W2Method::Exact1d).unwrap();
        assert!((plan.cost().sqrt() - w).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_is_close_to_exact_and_not_below_it() {
        let mu = atoms(&[(0.0, 0.2), (0.4, 0.3), (1.1, 0.5)]);
        let nu = atoms(&[(-0.2, 0.6), (0.9, 0.1), (2.0, 0.3)]);
        let exact = wasserstein2(&mu, &nu, W2Method::Exact1d).unwrap();
        let out = sinkhorn(&mu, &nu, &SinkhornConfig::default()).unwrap();
        let gap = out.distance.powi(2) - exact.powi(2);
        assert!(gap >= -1e-7, "gap {gap}");
        assert!(gap <= out.entropic_gap_bound(), "gap {gap} > {}", out.entropic_gap_bound());
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mu = atoms(&[(0.0, 0.5), (1.0, 0.5)]);
        let nu = atoms(&[(0.2, 0.5), (3.0, 0.5)]);
        let cfg = SinkhornConfig { epsilon: Some(1e-3), max_iterations: 1, ..Default::default() };
        match sinkhorn(&mu, &nu, &cfg) {
            Err(Error::SinkhornNonConvergence { iterations, marginal_error }) => {
                assert_eq!(iterations, 1);
                assert!(marginal_error > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn grid_and_cloud_quantiles_agree_with_closed_form() {
        use crate::measure::grid::{GridDensity1D, GridSpec};
        let g = GridSpec::centered(12.0, 0.01).unwrap();
        let a = GridDensity1D::gaussian(g, 0.0, 1.0).unwrap();
        let b = GridDensity1D::gaussian(g, 1.0, 4.0).unwrap();
        let w = wasserstein2_grids(&a, &b);
        assert!((w - 2f64.sqrt()).abs() < 1e-4, "w = {w}");
    }
}
