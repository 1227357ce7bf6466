//! Cylindrical functionals `F(μ) = f(μ(h₁), …, μ(hₙ))` and their intrinsic
//! gradient `∇^𝒫F(μ)(x) = Σᵢ ∂ᵢf(μ(h₁), …, μ(hₙ)) ∇hᵢ(x)`.
//!
//! Inner test functions are `C²` with bounded derivatives on bounded sets;
//! polynomial tests are admitted so moment functionals can be expressed.

use std::fmt;
use std::sync::Arc;

use crate::measure::{EmpiricalMeasure, Law};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes its output into the provided slice.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A `C²` function ℝᵈ → ℝ with gradient and (row-major) Hessian.
#[derive(Clone)]
pub struct TestFn {
    dim: usize,
    value: ScalarField,
    grad: VectorField,
    hess: VectorField,
    label: String,
}

impl fmt::Debug for TestFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFn({}, d={})", self.label, self.dim)
    }
}

impl TestFn {
    pub fn new(dim: usize, label: impl Into<String>, value: ScalarField, grad: VectorField, hess: VectorField) -> Self {
        Self { dim, value, grad, hess, label: label.into() }
    }

    /// One-dimensional test function from `h`, `h′`, `h″`.
    pub fn scalar<F, G, H>(label: impl Into<String>, h: F, dh: G, d2h: H) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            1,
            label,
            Arc::new(move |x| h(x[0])),
            Arc::new(move |x, out| out[0] = dh(x[0])),
            Arc::new(move |x, out| out[0] = d2h(x[0])),
        )
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(
            dim,
            format!("{c}"),
            Arc::new(move |_| c),
            Arc::new(|_, out| out.fill(0.0)),
            Arc::new(|_, out| out.fill(0.0)),
        )
    }

    /// `x ↦ x_k`.
    pub fn coordinate(dim: usize, k: usize) -> Self {
        Self::new(
            dim,
            format!("x{}", k + 1),
            Arc::new(move |x| x[k]),
            Arc::new(move |_, out| {
                out.fill(0.0);
                out[k] = 1.0;
            }),
            Arc::new(|_, out| out.fill(0.0)),
        )
    }

    /// `x ↦ |x|²`.
    pub fn squared_norm(dim: usize) -> Self {
        Self::new(
            dim,
            "|x|^2",
            Arc::new(|x| x.iter().map(|v| v * v).sum()),
            Arc::new(|x, out| out.iter_mut().zip(x).for_each(|(o, v)| *o = 2.0 * v)),
            Arc::new(move |_, out| {
                out.fill(0.0);
                for k in 0..dim {
                    out[k * dim + k] = 2.0;
                }
            }),
        )
    }

    /// `x ↦ xᵖ` on ℝ.
    pub fn monomial(p: i32) -> Self {
        let pf = p as f64;
        Self::scalar(
            format!("x^{p}"),
            move |x| x.powi(p),
            move |x| if p == 0 { 0.0 } else { pf * x.powi(p - 1) },
            move |x| if p < 2 { 0.0 } else { pf * (pf - 1.0) * x.powi(p - 2) },
        )
    }

    /// `x ↦ sin(a·x + b)` on ℝ.
    pub fn sine(a: f64, b: f64) -> Self {
        Self::scalar(
            format!("sin({a}x+{b})"),
            move |x| (a * x + b).sin(),
            move |x| a * (a * x + b).cos(),
            move |x| -a * a * (a * x + b).sin(),
        )
    }

    /// `x ↦ exp(−(x−c)²/(2s²))` on ℝ.
    pub fn bump(c: f64, s: f64) -> Self {
        let s2 = s * s;
        Self::scalar(
            format!("bump({c},{s})"),
            move |x| (-(x - c).powi(2) / (2.0 * s2)).exp(),
            move |x| -(x - c) / s2 * (-(x - c).powi(2) / (2.0 * s2)).exp(),
            move |x| ((x - c).powi(2) / s2 - 1.0) / s2 * (-(x - c).powi(2) / (2.0 * s2)).exp(),
        )
    }

    /// `x ↦ α·h(x) + β·g(x)`.
    pub fn combine(alpha: f64, h: &TestFn, beta: f64, g: &TestFn) -> Self {
        assert_eq!(h.dim, g.dim);
        let d = h.dim;
        let (h1, g1, h2, g2, h3, g3) = (h.clone(), g.clone(), h.clone(), g.clone(), h.clone(), g.clone());
        Self::new(
            d,
            format!("{alpha}*{}+{beta}*{}", h.label, g.label),
            Arc::new(move |x| alpha * h1.eval(x) + beta * g1.eval(x)),
            Arc::new(move |x, out| {
                let (a, b) = (h2.gradient(x), g2.gradient(x));
                out.iter_mut().zip(a.iter().zip(&b)).for_each(|(o, (p, q))| *o = alpha * p + beta * q);
            }),
            Arc::new(move |x, out| {
                let (a, b) = (h3.hessian(x), g3.hessian(x));
                out.iter_mut().zip(a.iter().zip(&b)).for_each(|(o, (p, q))| *o = alpha * p + beta * q);
            }),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.grad)(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim * self.dim];
        (self.hess)(x, &mut h);
        h
    }
}

/// Outer function `f: ℝⁿ → ℝ` with its gradient.
#[derive(Clone)]
pub struct OuterFn {
    n: usize,
    value: ScalarField,
    grad: VectorField,
    label: String,
}

impl fmt::Debug for OuterFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OuterFn({}, n={})", self.label, self.n)
    }
}

impl OuterFn {
    pub fn new(n: usize, label: impl Into<String>, value: ScalarField, grad: VectorField) -> Self {
        Self { n, value, grad, label: label.into() }
    }

    /// `r ↦ r` (n = 1).
    pub fn identity() -> Self {
        Self::linear(vec![1.0])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::new(n, format!("{c}"), Arc::new(move |_| c), Arc::new(|_, out| out.fill(0.0)))
    }

    /// `r ↦ Σ cᵢ rᵢ`.
    pub fn linear(coeffs: Vec<f64>) -> Self {
        let c2 = coeffs.clone();
        Self::new(
            coeffs.len(),
            "linear",
            Arc::new(move |r| r.iter().zip(&coeffs).map(|(a, b)| a * b).sum()),
            Arc::new(move |_, out| out.copy_from_slice(&c2)),
        )
    }

    /// One-variable outer function from `g` and `g′`.
    pub fn scalar<F, G>(label: impl Into<String>, g: F, dg: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(1, label, Arc::new(move |r| g(r[0])), Arc::new(move |r, out| out[0] = dg(r[0])))
    }

    /// `(r₁, r₂) ↦ r₁·r₂`.
    pub fn product() -> Self {
        Self::new(2, "r1*r2", Arc::new(|r| r[0] * r[1]), Arc::new(|r, out| {
            out[0] = r[1];
            out[1] = r[0];
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        (self.value)(r)
    }

    pub fn gradient(&self, r: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        (self.grad)(r, &mut g);
        g
    }
}

/// `F(μ) = f(μ(h₁), …, μ(hₙ))`.
#[derive(Clone, Debug)]
pub struct CylindricalFunction {
    inner: Vec<TestFn>,
    outer: OuterFn,
}

impl CylindricalFunction {
    pub fn new(outer: OuterFn, inner: Vec<TestFn>) -> Self {
        assert_eq!(outer.n, inner.len(), "outer arity must match the number of inner tests");
        assert!(!inner.is_empty(), "a cylindrical function needs at least one inner test");
        let d = inner[0].dim;
        assert!(inner.iter().all(|h| h.dim == d), "inner tests must share a dimension");
        Self { inner, outer }
    }

    /// `μ ↦ μ(h)`.
    pub fn linear(h: TestFn) -> Self {
        Self::new(OuterFn::identity(), vec![h])
    }

    /// The constant functional.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(OuterFn::constant(1, c), vec![TestFn::constant(dim, 0.0)])
    }

    /// `μ ↦ mean of coordinate k`.
    pub fn mean(dim: usize, k: usize) -> Self {
        Self::linear(TestFn::coordinate(dim, k))
    }

    pub fn dim(&self) -> usize {
        self.inner[0].dim
    }

    pub fn inner(&self) -> &[TestFn] {
        &self.inner
    }

    pub fn outer(&self) -> &OuterFn {
        &self.outer
    }

    /// `(μ(h₁), …, μ(hₙ))`.
    pub fn features<'a>(&self, mu: impl Into<Law<'a>>) -> Vec<f64> {
        let law = mu.into();
        self.inner.iter().map(|h| law.integrate(|x| h.eval(x))).collect()
    }

    pub fn evaluate<'a>(&self, mu: impl Into<Law<'a>>) -> f64 {
        self.outer.eval(&self.features(mu))
    }

    /// `∂f` at the features of μ.
    pub fn outer_gradient<'a>(&self, mu: impl Into<Law<'a>>) -> Vec<f64> {
        self.outer.gradient(&self.features(mu))
    }

    pub fn intrinsic_gradient<'a>(&self, mu: impl Into<Law<'a>>) -> GradientField {
        GradientField { coeffs: self.outer_gradient(mu), inner: self.inner.clone() }
    }
}

/// `x ↦ Σᵢ cᵢ ∇hᵢ(x)`, the intrinsic gradient frozen at one measure.
#[derive(Clone, Debug)]
pub struct GradientField {
    coeffs: Vec<f64>,
    inner: Vec<TestFn>,
}

impl GradientField {
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d];
        let mut g = vec![0.0; d];
        for (c, h) in self.coeffs.iter().zip(&self.inner) {
            if *c == 0.0 {
                continue;
            }
            h.gradient_into(x, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, gi)| *o += c * gi);
        }
        out
    }

    /// Jacobian `Σᵢ cᵢ ∇²hᵢ(x)`, row-major.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let mut out = vec![0.0; d * d];
        for (c, h) in self.coeffs.iter().zip(&self.inner) {
            if *c == 0.0 {
                continue;
            }
            let hh = h.hessian(x);
            out.iter_mut().zip(&hh).for_each(|(o, v)| *o += c * v);
        }
        out
    }

    /// `⟨∇^𝒫F(μ), φ⟩_{L²(μ)}`.
    pub fn pair<F: Fn(&[f64]) -> Vec<f64>>(&self, mu: &EmpiricalMeasure, phi: F) -> f64 {
        mu.iter()
            .map(|(x, w)| {
                let g = self.eval(x);
                w * g.iter().zip(phi(x)).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }
}

/// The intrinsic gradient of `F` at `μ` as a vector field on ℝᵈ.
pub fn intrinsic_gradient(f: &CylindricalFunction, mu: &EmpiricalMeasure) -> GradientField {
    f.intrinsic_gradient(mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_pm1() -> EmpiricalMeasure {
        EmpiricalMeasure::from_atoms_1d(&[(-1.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    #[test]
    fn linear_functional_gradient_is_grad_h() {
        let f = CylindricalFunction::linear(TestFn::monomial(2));
        for mu in [pair_pm1(), EmpiricalMeasure::dirac(&[3.0])] {
            let g = intrinsic_gradient(&f, &mu);
            for x in [-2.0, 0.0, 0.5, 4.0] {
                assert_eq!(g.eval(&[x])[0], 2.0 * x);
            }
        }
    }

    #[test]
    fn squared_moment_gradient_by_hand() {
        // F(μ) = μ(x²)², μ = ½(δ₋₁+δ₁): μ(x²) = 1, ∂g = 2, field 2·1·2x = 4x
        let f = CylindricalFunction::new(OuterFn::scalar("r^2", |r| r * r, |r| 2.0 * r), vec![TestFn::monomial(2)]);
        let g = intrinsic_gradient(&f, &pair_pm1());
        for x in [-1.5, 0.0, 0.3, 2.0] {
            assert!((g.eval(&[x])[0] - 4.0 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_functional_has_zero_gradient() {
        let f = CylindricalFunction::constant(1, 3.0);
        assert_eq!(f.evaluate(&pair_pm1()), 3.0);
        assert_eq!(intrinsic_gradient(&f, &pair_pm1()).eval(&[0.7]), vec![0.0]);
    }

    #[test]
    fn combined_test_fn_derivatives() {
        let h = TestFn::combine(2.0, &TestFn::sine(1.0, 0.0), -1.0, &TestFn::monomial(3));
        let x = [0.4];
        assert!((h.eval(&x) - (2.0 * 0.4f64.sin() - 0.064)).abs() < 1e-15);
        assert!((h.gradient(&x)[0] - (2.0 * 0.4f64.cos() - 3.0 * 0.16)).abs() < 1e-15);
        assert!((h.hessian(&x)[0] - (-2.0 * 0.4f64.sin() - 6.0 * 0.4)).abs() < 1e-15);
    }
}
