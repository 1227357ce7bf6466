//! Coefficient fields `b, σ` (nonlinear part) and `b̄, σ̄` (companion part)
//! evaluated at `(t, x, μ)`, together with the two built-in families:
//! nonlinear distorted Brownian motion (Nemytskii dependence on the density)
//! and the monotone mean-field Ornstein–Uhlenbeck family.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cylindrical::{ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, GridDensity1D, Law};
use crate::rng;

/// What a coefficient sees of its measure argument.
///
/// Moments are precomputed once per evaluation batch; the density view is the
/// grid itself for grid laws and a kernel density estimate for clouds.
#[derive(Clone, Debug)]
pub struct MeasureView<'a> {
    law: Law<'a>,
    density: Option<Cow<'a, GridDensity1D>>,
    mean: Vec<f64>,
    second_moment: f64,
}

impl<'a> MeasureView<'a> {
    pub fn of_grid(g: &'a GridDensity1D) -> Self {
        let mean = g.mean();
        let second_moment = g.integrate(|x| x * x);
        Self { law: Law::Grid(g), density: Some(Cow::Borrowed(g)), mean: vec![mean], second_moment }
    }

    pub fn of_cloud(m: &'a EmpiricalMeasure) -> Self {
        let mom = m.moments();
        Self { law: Law::Cloud(m), density: None, mean: mom.mean, second_moment: mom.second_moment }
    }

    /// View with externally computed moments (the particle simulator uses
    /// order-independent reductions).
    pub fn from_parts(law: Law<'a>, density: Option<GridDensity1D>, mean: Vec<f64>, second_moment: f64) -> Self {
        Self { law, density: density.map(Cow::Owned), mean, second_moment }
    }

    pub fn with_density(mut self, density: GridDensity1D) -> Self {
        self.density = Some(Cow::Owned(density));
        self
    }

    pub fn law(&self) -> Law<'a> {
        self.law
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// ‖μ‖₂² = ∫|x|² dμ.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn density(&self) -> Option<&GridDensity1D> {
        self.density.as_deref()
    }

    /// Density value at `x` (cell lookup, zero off the grid).
    pub fn density_at(&self, x: f64) -> Result<f64> {
        self.density.as_deref().map(|d| d.value_at(x)).ok_or(Error::MissingDensityView)
    }
}

/// `(t, x, view, out)`: writes a vector (drift, length d) or a row-major
/// matrix (diffusion, d×m) into `out`.
pub type CoefficientFn = dyn Fn(f64, &[f64], &MeasureView<'_>, &mut [f64]) -> Result<()> + Send + Sync;
/// `(t, x, u) ↦ (p, ∂p/∂u)` with `p = (σσ*)(t, x, u)·u`, the porous-medium
/// pressure of a Nemytskii diffusion in one dimension.
pub type PressureFn = dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync;
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which pair of coefficients to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `(b, σ)`, driving the nonlinear equation for μ.
    Nonlinear,
    /// `(b̄, σ̄)`, driving the linear equation for ν along a frozen flow.
    Companion,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldOu {
    pub lambda0: f64,
    pub kappa0: f64,
    pub sigma0: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Custom,
    Heat,
    MeanFieldOu(MeanFieldOu),
    Nldbm,
}

#[derive(Clone)]
pub struct CoefficientSet {
    dim: usize,
    noise_dim: usize,
    time_homogeneous: bool,
    requires_density: bool,
    drift: Arc<CoefficientFn>,
    diffusion: Arc<CoefficientFn>,
    drift_bar: Arc<CoefficientFn>,
    diffusion_bar: Arc<CoefficientFn>,
    pressure: Option<Arc<PressureFn>>,
    family: Family,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("time_homogeneous", &self.time_homogeneous)
            .field("requires_density", &self.requires_density)
            .field("family", &self.family)
            .finish()
    }
}

impl CoefficientSet {
    /// Coefficients with `b̄ = b`, `σ̄ = σ`.
    pub fn new(dim: usize, noise_dim: usize, drift: Arc<CoefficientFn>, diffusion: Arc<CoefficientFn>) -> Self {
        Self {
            dim,
            noise_dim,
            time_homogeneous: true,
            requires_density: false,
            drift_bar: drift.clone(),
            diffusion_bar: diffusion.clone(),
            drift,
            diffusion,
            pressure: None,
            family: Family::Custom,
        }
    }

    pub fn with_companion(mut self, drift_bar: Arc<CoefficientFn>, diffusion_bar: Arc<CoefficientFn>) -> Self {
        self.drift_bar = drift_bar;
        self.diffusion_bar = diffusion_bar;
        self
    }

    pub fn time_dependent(mut self) -> Self {
        self.time_homogeneous = false;
        self
    }

    pub fn requiring_density(mut self) -> Self {
        self.requires_density = true;
        self
    }

    pub fn with_pressure(mut self, pressure: Arc<PressureFn>) -> Self {
        self.pressure = Some(pressure);
        self
    }

    fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    /// Brownian motion: `b = 0`, `σ = Id`.
    pub fn heat(dim: usize) -> Self {
        Self::constant(vec![0.0; dim], 1.0).with_family(Family::Heat)
    }

    /// Constant drift `v` and diffusion `s·Id`.
    pub fn constant(v: Vec<f64>, s: f64) -> Self {
        let dim = v.len();
        Self::new(
            dim,
            dim,
            Arc::new(move |_, _, _, out| {
                out.copy_from_slice(&v);
                Ok(())
            }),
            Arc::new(move |_, _, _, out| {
                scaled_identity(out, dim, s);
                Ok(())
            }),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    pub fn requires_density(&self) -> bool {
        self.requires_density
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn pressure(&self) -> Option<&PressureFn> {
        self.pressure.as_deref()
    }

    /// The companion pair promoted to the main pair (for running the
    /// companion dynamics through code that reads `(b, σ)`).
    pub fn companion(&self) -> Self {
        let mut c = self.clone();
        c.drift = self.drift_bar.clone();
        c.diffusion = self.diffusion_bar.clone();
        if !Arc::ptr_eq(&self.drift, &self.drift_bar) || !Arc::ptr_eq(&self.diffusion, &self.diffusion_bar) {
            c.pressure = None;
        }
        c
    }

    pub fn drift_into(&self, side: Side, t: f64, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) -> Result<()> {
        match side {
            Side::Nonlinear => (self.drift)(t, x, mu, out),
            Side::Companion => (self.drift_bar)(t, x, mu, out),
        }
    }

    pub fn diffusion_into(&self, side: Side, t: f64, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) -> Result<()> {
        match side {
            Side::Nonlinear => (self.diffusion)(t, x, mu, out),
            Side::Companion => (self.diffusion_bar)(t, x, mu, out),
        }
    }

    pub fn drift(&self, side: Side, t: f64, x: &[f64], mu: &MeasureView<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(side, t, x, mu, &mut out)?;
        Ok(out)
    }

    /// σ as a row-major d×m matrix.
    pub fn diffusion(&self, side: Side, t: f64, x: &[f64], mu: &MeasureView<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(side, t, x, mu, &mut out)?;
        Ok(out)
    }

    /// σσ* as a row-major d×d matrix.
    pub fn diffusion_matrix(&self, side: Side, t: f64, x: &[f64], mu: &MeasureView<'_>) -> Result<Vec<f64>> {
        let s = self.diffusion(side, t, x, mu)?;
        Ok(outer_product(&s, self.dim, self.noise_dim))
    }

    /// `(σσ*)₁₁` for one-dimensional coefficients.
    pub fn diffusivity_1d(&self, side: Side, t: f64, x: f64, mu: &MeasureView<'_>) -> Result<f64> {
        let mut s = [0.0f64; 8];
        let m = self.noise_dim;
        let buf: &mut [f64] = if m <= 8 { &mut s[..m] } else { return Ok(self.diffusion_matrix(side, t, &[x], mu)?[0]) };
        self.diffusion_into(side, t, &[x], mu, buf)?;
        Ok(buf.iter().map(|v| v * v).sum())
    }
}

pub(crate) fn scaled_identity(out: &mut [f64], dim: usize, s: f64) {
    out.fill(0.0);
    for k in 0..dim {
        out[k * dim + k] = s;
    }
}

/// `S Sᵀ` for a row-major d×m matrix.
pub fn outer_product(s: &[f64], d: usize, m: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..m).map(|k| s[i * m + k] * s[j * m + k]).sum();
        }
    }
    a
}

/// Constants of the linear-growth / monotonicity condition used by the
/// ergodicity harness.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityConstants {
    #[serde(rename = "K")]
    pub k: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub lambda_bar: f64,
    pub kappa_bar: f64,
}

impl MonotonicityConstants {
    pub fn check_ergodic(&self) -> Result<()> {
        if self.lambda > self.kappa && self.kappa >= 0.0 {
            Ok(())
        } else {
            Err(Error::ErgodicityHypothesis { lambda: self.lambda, kappa: self.kappa })
        }
    }
}

impl MeanFieldOu {
    /// `b(x, μ) = −λ₀x + κ₀·mean(μ)`, `σ = σ₀·Id`, `b̄ = b`, `σ̄ = σ` in dimension `dim`.
    pub fn coefficients(&self, dim: usize) -> CoefficientSet {
        let MeanFieldOu { lambda0, kappa0, sigma0 } = *self;
        CoefficientSet::new(
            dim,
            dim,
            Arc::new(move |_, x, mu, out| {
                let m = mu.mean();
                for k in 0..x.len() {
                    out[k] = -lambda0 * x[k] + kappa0 * m[k];
                }
                Ok(())
            }),
            Arc::new(move |_, _, _, out| {
                scaled_identity(out, dim, sigma0);
                Ok(())
            }),
        )
        .with_family(Family::MeanFieldOu(*self))
    }

    /// `λ = 2λ₀ − |κ₀|`, `κ = |κ₀|` from Young's inequality and
    /// `|mean(μ) − mean(ν)| ≤ 𝕎₂(μ, ν)`; the companion pair is identical.
    pub fn constants(&self) -> MonotonicityConstants {
        let k_abs = self.kappa0.abs();
        let scale = self.lambda0.abs().max(k_abs).max(self.sigma0.abs());
        let k = (scale + 1.0).max(2.0 * scale);
        let lambda = 2.0 * self.lambda0 - k_abs;
        MonotonicityConstants { k, lambda, kappa: k_abs, lambda_bar: lambda, kappa_bar: k_abs }
    }

    /// Stationary law N(0, σ₀²/(2λ₀)) of both components when λ₀ > κ₀.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma0 * self.sigma0 / (2.0 * self.lambda0)
    }
}

/// Mean-field OU coefficients on ℝ and their monotonicity constants.
pub fn meanfield_ou_coefficients(lambda0: f64, kappa0: f64, sigma0: f64) -> (CoefficientSet, MonotonicityConstants) {
    let p = MeanFieldOu { lambda0, kappa0, sigma0 };
    (p.coefficients(1), p.constants())
}

/// Parametric nonlinearities β available from configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaForm {
    /// `β(r) = s·r`.
    Linear { slope: f64 },
    /// `β(r) = s·r + arctan(r)`, so `s ≤ β′ ≤ s + 1`.
    LinearPlusArctan { slope: f64 },
    /// `β(r) = r²` (violates the uniform ellipticity bound at 0).
    Square,
}

impl BetaForm {
    fn functions(self) -> (RealFn, RealFn) {
        match self {
            BetaForm::Linear { slope } => (Arc::new(move |r| slope * r), Arc::new(move |_| slope)),
            BetaForm::LinearPlusArctan { slope } => {
                (Arc::new(move |r: f64| slope * r + r.atan()), Arc::new(move |r: f64| slope + 1.0 / (1.0 + r * r)))
            }
            BetaForm::Square => (Arc::new(|r| r * r), Arc::new(|r| 2.0 * r)),
        }
    }

    /// Declared `(γ, γ₁)`.
    fn bounds(self) -> (f64, f64) {
        match self {
            BetaForm::Linear { slope } => (slope, slope),
            BetaForm::LinearPlusArctan { slope } => (slope, slope + 1.0),
            BetaForm::Square => (1.0, 2.0),
        }
    }
}

/// Parametric drift magnitudes `b(r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftScalarForm {
    Constant { value: f64 },
    /// `b(r) = a / (1 + r²)`.
    Lorentzian { amplitude: f64 },
}

impl DriftScalarForm {
    fn functions(self) -> (RealFn, RealFn, f64) {
        match self {
            DriftScalarForm::Constant { value } => (Arc::new(move |_| value), Arc::new(|_| 0.0), value.abs()),
            DriftScalarForm::Lorentzian { amplitude } => (
                Arc::new(move |r: f64| amplitude / (1.0 + r * r)),
                Arc::new(move |r: f64| -2.0 * amplitude * r / (1.0 + r * r).powi(2)),
                amplitude.abs(),
            ),
        }
    }
}

/// Serializable description of an NLDBM coefficient family with the
/// canonical potential `Φ(x) = C(1+|x|²)^α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NldbmSpec {
    pub beta: BetaForm,
    pub b_scalar: DriftScalarForm,
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub gamma1: Option<f64>,
}

impl NldbmSpec {
    pub fn params(&self, dim: usize) -> NldbmParams {
        let (beta, beta_prime) = self.beta.functions();
        let (g, g1) = self.beta.bounds();
        let (b_scalar, b_scalar_prime, b_bound) = self.b_scalar.functions();
        let mut p = NldbmParams::canonical(dim, beta, beta_prime, self.gamma.unwrap_or(g), self.gamma1.unwrap_or(g1), b_scalar, b_scalar_prime, self.c, self.alpha);
        p.b_bound = b_bound;
        p
    }
}

/// Ingredients of nonlinear distorted Brownian motion.
#[derive(Clone)]
pub struct NldbmParams {
    pub dim: usize,
    pub beta: RealFn,
    pub beta_prime: RealFn,
    pub gamma: f64,
    pub gamma1: f64,
    pub b_scalar: RealFn,
    pub b_scalar_prime: RealFn,
    /// Declared sup |b|.
    pub b_bound: f64,
    pub phi: ScalarField,
    pub grad_phi: VectorField,
    /// Declared sup |∇Φ|.
    pub grad_phi_bound: f64,
    /// Canonical potential parameters when `Φ = C(1+|x|²)^α`.
    pub canonical: Option<(f64, f64)>,
}

impl fmt::Debug for NldbmParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NldbmParams")
            .field("dim", &self.dim)
            .field("gamma", &self.gamma)
            .field("gamma1", &self.gamma1)
            .field("canonical", &self.canonical)
            .finish()
    }
}

impl NldbmParams {
    #[allow(clippy::too_many_arguments)]
    pub fn canonical(
        dim: usize,
        beta: RealFn,
        beta_prime: RealFn,
        gamma: f64,
        gamma1: f64,
        b_scalar: RealFn,
        b_scalar_prime: RealFn,
        c: f64,
        alpha: f64,
    ) -> Self {
        Self {
            dim,
            beta,
            beta_prime,
            gamma,
            gamma1,
            b_scalar,
            b_scalar_prime,
            b_bound: f64::INFINITY,
            phi: Arc::new(move |x| c * (1.0 + norm_sq(x)).powf(alpha)),
            grad_phi: Arc::new(move |x, out| {
                let f = 2.0 * alpha * c * (1.0 + norm_sq(x)).powf(alpha - 1.0);
                out.iter_mut().zip(x).for_each(|(o, xi)| *o = f * xi);
            }),
            // 2αC·|x|(1+|x|²)^{α−1} ≤ 2αC for α ≤ ½
            grad_phi_bound: 2.0 * alpha.abs() * c.abs(),
            canonical: Some((c, alpha)),
        }
    }

    /// `β(u)/u`, with the value `β′(0)` at `u = 0`.
    pub fn diffusivity(&self, u: f64) -> f64 {
        let u = u.max(0.0);
        if u == 0.0 {
            (self.beta_prime)(0.0)
        } else {
            (self.beta)(u) / u
        }
    }

    /// `D(x) = −∇Φ(x)`.
    pub fn transport_field(&self, x: &[f64], out: &mut [f64]) {
        (self.grad_phi)(x, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Nemytskii coefficients `σ = √(β(u)/u)·Id`, `b = b(u)·D(x)` where `u` is
/// the density of μ at `x`; `b̄ = b`, `σ̄ = σ`.
pub fn nldbm_coefficients(p: &NldbmParams) -> CoefficientSet {
    let dim = p.dim;
    let (pd, ps, pp) = (p.clone(), p.clone(), p.clone());
    CoefficientSet::new(
        dim,
        dim,
        Arc::new(move |_, x, mu, out| {
            let u = mu.density_at(x[0])?;
            pd.transport_field(x, out);
            let bu = (pd.b_scalar)(u);
            out.iter_mut().for_each(|v| *v *= bu);
            Ok(())
        }),
        Arc::new(move |_, x, mu, out| {
            let u = mu.density_at(x[0])?;
            scaled_identity(out, dim, ps.diffusivity(u).sqrt());
            Ok(())
        }),
    )
    .requiring_density()
    .with_pressure(Arc::new(move |_, _, u| {
        let u = u.max(0.0);
        ((pp.beta)(u), (pp.beta_prime)(u))
    }))
    .with_family(Family::Nldbm)
}

/// One inequality checked by sampling, with its worst observed margin
/// (`rhs − lhs`; negative means violated).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HypothesisCheck {
    pub name: String,
    pub worst_margin: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub passed: bool,
}

/// Margin below which a sampled inequality counts as violated.
pub const HYPOTHESIS_TOL: f64 = 1e-8;

impl HypothesisReport {
    fn from_checks(checks: Vec<HypothesisCheck>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { checks, passed }
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: &str, margins: impl IntoIterator<Item = f64>) -> HypothesisCheck {
    let mut worst = f64::INFINITY;
    let mut samples = 0;
    for m in margins {
        samples += 1;
        worst = if m.is_nan() { f64::NEG_INFINITY } else { worst.min(m) };
    }
    HypothesisCheck { name: name.into(), worst_margin: worst, samples, passed: worst >= -HYPOTHESIS_TOL }
}

/// What to validate.
pub enum HypothesisTarget<'a> {
    Nldbm(&'a NldbmParams),
    MonotoneCoefficients(&'a CoefficientSet, &'a MonotonicityConstants),
}

pub fn validate_hypotheses(target: HypothesisTarget<'_>, sample_box: (f64, f64), n_samples: usize, seed: u64) -> HypothesisReport {
    match target {
        HypothesisTarget::Nldbm(p) => validate_nldbm(p, sample_box, n_samples, seed),
        HypothesisTarget::MonotoneCoefficients(c, k) => validate_monotone(c, k, sample_box, n_samples, seed),
    }
}

fn validate_nldbm(p: &NldbmParams, (lo, hi): (f64, f64), n: usize, seed: u64) -> HypothesisReport {
    let mut rng = rng::stream(seed, 0);
    let rs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).chain([0.0]).collect();
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..p.dim).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let fd = |f: &RealFn, r: f64| {
        let h = 1e-5 * (1.0 + r.abs());
        (f(r + h) - f(r - h)) / (2.0 * h)
    };
    let mut grad = vec![0.0; p.dim];
    let mut checks = vec![
        check("nonlinearity: beta(0) = 0", [-(p.beta)(0.0).abs()]),
        check("nonlinearity: 0 < gamma < gamma1", [p.gamma, p.gamma1 - p.gamma]),
        check("nonlinearity: beta' >= gamma", rs.iter().map(|&r| (p.beta_prime)(r) - p.gamma)),
        check("nonlinearity: beta' <= gamma1", rs.iter().map(|&r| p.gamma1 - (p.beta_prime)(r))),
        check(
            "nonlinearity: beta' matches beta",
            rs.iter().map(|&r| 1e-5 * (1.0 + (p.beta_prime)(r).abs()) - (fd(&p.beta, r) - (p.beta_prime)(r)).abs()),
        ),
        check("drift scalar: |b| <= declared bound", rs.iter().map(|&r| p.b_bound - (p.b_scalar)(r).abs())),
        check(
            "drift scalar: b' matches b",
            rs.iter().map(|&r| 1e-5 * (1.0 + (p.b_scalar_prime)(r).abs()) - (fd(&p.b_scalar, r) - (p.b_scalar_prime)(r)).abs()),
        ),
        check(
            "potential gradient: |D| <= declared bound",
            xs.iter().map(|x| {
                (p.grad_phi)(x, &mut grad);
                p.grad_phi_bound - norm_sq(&grad).sqrt()
            }),
        ),
        check("potential: Phi >= 1", xs.iter().map(|x| (p.phi)(x) - 1.0)),
    ];
    if let Some((_, alpha)) = p.canonical {
        checks.push(check("potential: canonical alpha in (0, 1/2]", [alpha, 0.5 - alpha]));
    }
    HypothesisReport::from_checks(checks)
}

fn hs_norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// Exact 𝕎₂² between two uniform two-atom measures in any dimension.
fn w2_sq_two_atoms(a: &[Vec<f64>; 2], b: &[Vec<f64>; 2]) -> f64 {
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let straight = 0.5 * (d(&a[0], &b[0]) + d(&a[1], &b[1]));
    let crossed = 0.5 * (d(&a[0], &b[1]) + d(&a[1], &b[0]));
    straight.min(crossed)
}

fn validate_monotone(c: &CoefficientSet, k: &MonotonicityConstants, (lo, hi): (f64, f64), n: usize, seed: u64) -> HypothesisReport {
    if c.requires_density() {
        return HypothesisReport::from_checks(vec![HypothesisCheck {
            name: "coefficients evaluable on atomic measures".into(),
            worst_margin: f64::NEG_INFINITY,
            samples: 0,
            passed: false,
        }]);
    }
    let d = c.dim();
    let mut rng = rng::stream(seed, 1);
    let point = |rng: &mut rng::Stream| (0..d).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    let (mut growth, mut mono, mut mono_bar, mut homog) = (vec![], vec![], vec![], vec![]);
    let mut failures = 0usize;
    for _ in 0..n {
        let x = point(&mut rng);
        let y = point(&mut rng);
        let ma = [point(&mut rng), point(&mut rng)];
        let na = [point(&mut rng), point(&mut rng)];
        let mu = EmpiricalMeasure::uniform(d, ma.concat()).expect("two atoms");
        let nu = EmpiricalMeasure::uniform(d, na.concat()).expect("two atoms");
        let (vm, vn) = (MeasureView::of_cloud(&mu), MeasureView::of_cloud(&nu));
        let t = rng.random_range(0.0..10.0);
        let eval = || -> Result<[f64; 3]> {
            let w2 = w2_sq_two_atoms(&ma, &na);
            let dx2 = norm_sq(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            let mut out = [0.0; 3];
            let lhs = c.drift(Side::Nonlinear, t, &x, &vm)?.iter().map(|v| v * v).sum::<f64>().sqrt()
                + hs_norm(&c.diffusion(Side::Nonlinear, t, &x, &vm)?)
                + c.drift(Side::Companion, t, &x, &vm)?.iter().map(|v| v * v).sum::<f64>().sqrt()
                + hs_norm(&c.diffusion(Side::Companion, t, &x, &vm)?);
            out[0] = k.k * (1.0 + norm_sq(&x).sqrt() + vm.second_moment().sqrt()) - lhs;
            for (side, (kap, lam), slot) in [
                (Side::Nonlinear, (k.kappa, k.lambda), 1usize),
                (Side::Companion, (k.kappa_bar, k.lambda_bar), 2usize),
            ] {
                let bx = c.drift(side, t, &x, &vm)?;
                let by = c.drift(side, t, &y, &vn)?;
                let sx = c.diffusion(side, t, &x, &vm)?;
                let sy = c.diffusion(side, t, &y, &vn)?;
                let inner: f64 = (0..d).map(|i| (bx[i] - by[i]) * (x[i] - y[i])).sum();
                let hs: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b) * (a - b)).sum();
                out[slot] = kap * w2 - lam * dx2 - (2.0 * inner + hs);
            }
            Ok(out)
        };
        match eval() {
            Ok([g, m, mb]) => {
                growth.push(g);
                mono.push(m);
                mono_bar.push(mb);
            }
            Err(_) => failures += 1,
        }
        if c.is_time_homogeneous() {
            let t2 = rng.random_range(0.0..10.0);
            let diff = c
                .drift(Side::Nonlinear, t, &x, &vm)
                .and_then(|a| c.drift(Side::Nonlinear, t2, &x, &vm).map(|b| (a, b)))
                .map(|(a, b)| a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
                .unwrap_or(f64::INFINITY);
            homog.push(-diff);
        }
    }
    let mut checks = vec![
        check("linear growth", growth),
        check("monotonicity of (b, sigma)", mono),
        check("monotonicity of (b_bar, sigma_bar)", mono_bar),
        check("coefficients evaluable", [if failures == 0 { 0.0 } else { -(failures as f64) }]),
    ];
    if c.is_time_homogeneous() {
        checks.push(check("time homogeneity", homog));
    }
    HypothesisReport::from_checks(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;

    fn arctan_spec() -> NldbmSpec {
        NldbmSpec {
            beta: BetaForm::LinearPlusArctan { slope: 2.0 },
            b_scalar: DriftScalarForm::Lorentzian { amplitude: 1.0 },
            c: 1.0,
            alpha: 0.5,
            gamma: None,
            gamma1: None,
        }
    }

    #[test]
    fn linear_beta_gives_brownian_coefficients() {
        let spec = NldbmSpec {
            beta: BetaForm::Linear { slope: 1.0 },
            b_scalar: DriftScalarForm::Constant { value: 0.0 },
            ..arctan_spec()
        };
        let c = nldbm_coefficients(&spec.params(1));
        let g = GridSpec::centered(3.0, 0.1).unwrap();
        let rho = GridDensity1D::gaussian(g, 0.0, 0.5).unwrap();
        let v = MeasureView::of_grid(&rho);
        for x in [-1.0, 0.0, 0.3] {
            assert_eq!(c.diffusion(Side::Nonlinear, 0.0, &[x], &v).unwrap(), vec![1.0]);
            assert_eq!(c.drift(Side::Nonlinear, 0.0, &[x], &v).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn arctan_beta_diffusivity_at_unit_density() {
        let p = arctan_spec().params(1);
        // β(1)/1 = 2 + arctan(1)
        assert!((p.diffusivity(1.0) - (2.0 + 1f64.atan())).abs() < 1e-15);
        assert!((p.diffusivity(1.0) - 2.785_398_163_397_448).abs() < 1e-12);
        // β(0)/0 := β′(0) = 3
        assert_eq!(p.diffusivity(0.0), 3.0);
    }

    #[test]
    fn canonical_potential_transport_field() {
        let p = arctan_spec().params(1);
        let mut d = [0.0];
        for x in [-5.0, -0.3, 0.0, 2.0, 40.0] {
            p.transport_field(&[x], &mut d);
            let expected = -x / (1.0f64 + x * x).sqrt();
            assert!((d[0] - expected).abs() < 1e-14);
            assert!(d[0].abs() < 1.0);
        }
    }

    #[test]
    fn nemytskii_depends_only_on_local_density() {
        let c = nldbm_coefficients(&arctan_spec().params(1));
        let g = GridSpec::centered(3.0, 0.1).unwrap();
        let a = GridDensity1D::gaussian(g, 0.0, 0.5).unwrap();
        let mut vals = a.values().to_vec();
        // change the density away from x = 0 only, keeping mass fixed
        let i0 = g.nearest_cell(0.0);
        let (i1, i2) = (i0 + 10, i0 + 12);
        let delta = vals[i1].min(vals[i2]) * 0.5;
        vals[i1] += delta;
        vals[i2] -= delta;
        let b = GridDensity1D::new(g, vals).unwrap();
        let (va, vb) = (MeasureView::of_grid(&a), MeasureView::of_grid(&b));
        let x = [g.center(i0)];
        assert_eq!(c.drift(Side::Nonlinear, 0.0, &x, &va).unwrap(), c.drift(Side::Nonlinear, 0.0, &x, &vb).unwrap());
        assert_eq!(
            c.diffusion(Side::Nonlinear, 0.0, &x, &va).unwrap(),
            c.diffusion(Side::Nonlinear, 0.0, &x, &vb).unwrap()
        );
    }

    #[test]
    fn nemytskii_needs_density_view() {
        let c = nldbm_coefficients(&arctan_spec().params(1));
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let v = MeasureView::of_cloud(&mu);
        assert!(matches!(c.drift(Side::Nonlinear, 0.0, &[0.0], &v), Err(Error::MissingDensityView)));
    }

    #[test]
    fn nldbm_diffusion_is_uniformly_elliptic() {
        let p = arctan_spec().params(1);
        for u in [0.0, 1e-9, 0.3, 1.0, 7.0, 1e4] {
            let a = p.diffusivity(u);
            assert!(a >= p.gamma - 1e-12 && a <= p.gamma1 + 1e-12, "a({u}) = {a}");
        }
    }

    #[test]
    fn meanfield_ou_constants() {
        let (_, k) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
        assert_eq!((k.lambda, k.kappa), (2.0, 0.0));
        let (_, k) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
        assert_eq!((k.lambda, k.kappa), (1.5, 0.5));
        assert_eq!(k.lambda - k.kappa, 1.0);
    }

    #[test]
    fn meanfield_ou_is_affine_in_x_and_mean() {
        let (c, _) = meanfield_ou_coefficients(1.3, 0.4, 0.7);
        let mk = |m: f64| EmpiricalMeasure::dirac(&[m]);
        let eval = |x: f64, m: f64| {
            let mu = mk(m);
            c.drift(Side::Nonlinear, 0.0, &[x], &MeasureView::of_cloud(&mu)).unwrap()[0]
        };
        // exact interpolation at three points in each argument
        let (x0, x1, x2) = (-1.0, 0.5, 2.0);
        let slope = (eval(x1, 0.3) - eval(x0, 0.3)) / (x1 - x0);
        assert!((eval(x2, 0.3) - (eval(x0, 0.3) + slope * (x2 - x0))).abs() < 1e-12);
        let (m0, m1, m2) = (-2.0, 0.0, 3.0);
        let slope = (eval(0.2, m1) - eval(0.2, m0)) / (m1 - m0);
        assert!((eval(0.2, m2) - (eval(0.2, m0) + slope * (m2 - m0))).abs() < 1e-12);
    }

    #[test]
    fn validation_passes_for_arctan_and_fails_for_square() {
        let good = validate_hypotheses(HypothesisTarget::Nldbm(&arctan_spec().params(1)), (-10.0, 10.0), 10_000, 1);
        assert!(good.passed, "{good:?}");
        let sq = NldbmSpec { beta: BetaForm::Square, ..arctan_spec() };
        let bad = validate_hypotheses(HypothesisTarget::Nldbm(&sq.params(1)), (-10.0, 10.0), 10_000, 1);
        assert!(!bad.passed);
        assert!(!bad.check("nonlinearity: beta' >= gamma").unwrap().passed);
    }

    #[test]
    fn condition_a_holds_for_meanfield_ou() {
        let (c, k) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
        let r = validate_hypotheses(HypothesisTarget::MonotoneCoefficients(&c, &k), (-10.0, 10.0), 10_000, 2);
        assert!(r.passed, "{r:?}");
        let too_strong = MonotonicityConstants { lambda: 2.5, ..k };
        let r = validate_hypotheses(HypothesisTarget::MonotoneCoefficients(&c, &too_strong), (-10.0, 10.0), 10_000, 2);
        assert!(!r.passed);
    }
}
