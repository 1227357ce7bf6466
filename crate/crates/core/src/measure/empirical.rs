use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on the total weight of a probability measure.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted particle cloud `Σ w_i δ_{x_i}` on ℝᵈ. Points are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// First and second moments of a measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    /// Row-major d×d covariance.
    pub covariance: Vec<f64>,
    /// ‖μ‖₂² = ∫|x|² dμ.
    pub second_moment: f64,
}

impl Moments {
    pub fn variance_1d(&self) -> f64 {
        self.covariance[0]
    }
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("a measure needs at least one atom".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not form {} points of dimension {}",
                points.len(),
                weights.len(),
                dim
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("invalid weight {w}")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite particle position".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Rescales nonnegative weights to total mass one.
    pub fn normalized(dim: usize, points: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!("total weight {total} cannot be normalized")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        // Push the rounding residue onto the heaviest atom so the sum is 1 to the last bit budget.
        let residue = 1.0 - weights.iter().sum::<f64>();
        if let Some(k) = (0..weights.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b])) {
            weights[k] += residue;
        }
        Self::new(dim, points, weights)
    }

    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::InvalidMeasure("cannot form a uniform cloud".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite particle position".into()));
        }
        let n = points.len() / dim;
        Ok(Self { dim, points, weights: vec![1.0 / n as f64; n] })
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self { dim: x.len(), points: x.to_vec(), weights: vec![1.0] }
    }

    /// One-dimensional measure from `(position, weight)` atoms.
    pub fn from_atoms_1d(atoms: &[(f64, f64)]) -> Result<Self> {
        let (p, w): (Vec<f64>, Vec<f64>) = atoms.iter().copied().unzip();
        Self::new(1, p, w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| w == w0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks(self.dim).zip(self.weights.iter().copied())
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }

    pub fn moments(&self) -> Moments {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for (x, w) in self.iter() {
            for k in 0..d {
                mean[k] += w * x[k];
            }
        }
        let mut covariance = vec![0.0; d * d];
        let mut second_moment = 0.0;
        for (x, w) in self.iter() {
            for a in 0..d {
                second_moment += w * x[a] * x[a];
                for b in 0..d {
                    covariance[a * d + b] += w * (x[a] - mean[a]) * (x[b] - mean[b]);
                }
            }
        }
        Moments { mean, covariance, second_moment }
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn effective_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// The image of the measure under `x ↦ x + t·φ(x)`; weights are untouched.
    pub fn pushforward<F: Fn(&[f64]) -> Vec<f64>>(&self, phi: F, t: f64) -> Self {
        let mut points = self.points.clone();
        for x in points.chunks_mut(self.dim) {
            let v = phi(x);
            debug_assert_eq!(v.len(), self.dim);
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += t * vi;
            }
        }
        Self { dim: self.dim, points, weights: self.weights.clone() }
    }

    /// Multinomial resampling into `n` uniform-weight particles.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for &w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let mut points = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(self.len() - 1);
            points.extend_from_slice(self.point(k));
        }
        Self::uniform(self.dim, points).expect("resampled cloud is valid")
    }

    /// 1-D positions, panicking on other dimensions.
    pub fn positions_1d(&self) -> &[f64] {
        assert_eq!(self.dim, 1, "positions_1d on a {}-dimensional measure", self.dim);
        &self.points
    }

    /// Atoms sorted by position (1-D only), zero-weight atoms dropped.
    pub fn sorted_atoms_1d(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self
            .positions_1d()
            .iter()
            .copied()
            .zip(self.weights.iter().copied())
            .filter(|&(_, w)| w > 0.0)
            .collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    }
}
