//! Lifted dynamics on ℝᵈ×𝒫: the measure generator `𝐋ₜF`, the lifted
//! generator `𝐋̃ₜG`, product laws `ν × δ_μ`, the transition kernel
//! `𝐏_{s,t}(x, ζ; ·)`, and consistency harnesses built on them.

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, MeasureView, Side};
use crate::cylindrical::{CylindricalFunction, TestFn};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::fpe::{solve_frozen_fpe_on, solve_nonlinear_fpe, DensityPath, Record, SolverConfig};
use crate::measure::{EmpiricalMeasure, GridDensity1D, Law, Mollifier};
use crate::particle::{marginal, simulate_frozen, SimConfig};

/// `G(x, μ) = h₀(x)·F(μ)`.
#[derive(Clone, Debug)]
pub struct LiftedTestFunction {
    pub h0: TestFn,
    pub f: CylindricalFunction,
}

impl LiftedTestFunction {
    pub fn new(h0: TestFn, f: CylindricalFunction) -> Self {
        Self { h0, f }
    }

    pub fn eval<'a>(&self, x: &[f64], mu: impl Into<Law<'a>>) -> f64 {
        self.h0.eval(x) * self.f.evaluate(mu)
    }
}

/// `½ a : ∇²h + b·∇h` at one point.
fn local_generator(coeffs: &CoefficientSet, side: Side, t: f64, x: &[f64], view: &MeasureView<'_>, h: &TestFn) -> Result<f64> {
    let d = x.len();
    let b = coeffs.drift(side, t, x, view)?;
    let a = coeffs.diffusion_matrix(side, t, x, view)?;
    let hess = h.hessian(x);
    let grad = h.gradient(x);
    let second: f64 = a.iter().zip(&hess).map(|(p, q)| p * q).sum();
    let first: f64 = (0..d).map(|k| b[k] * grad[k]).sum();
    Ok(0.5 * second + first)
}

/// `L̄_{t,μ}h(x)`, the companion Kolmogorov operator at one point.
pub fn companion_operator(coeffs: &CoefficientSet, t: f64, x: &[f64], view: &MeasureView<'_>, h: &TestFn) -> Result<f64> {
    local_generator(coeffs, Side::Companion, t, x, view, h)
}

/// `𝐋ₜF(μ) = Σᵢ ∂ᵢf · ∫ (½ σσ* : ∇²hᵢ + b·∇hᵢ) dμ`.
pub fn measure_generator(f: &CylindricalFunction, view: &MeasureView<'_>, coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    let law = view.law();
    let df = f.outer_gradient(law);
    let atoms = law.atoms();
    let mut total = 0.0;
    for (k, h) in f.inner().iter().enumerate() {
        if df[k] == 0.0 {
            continue;
        }
        let mut integral = 0.0;
        for (x, w) in &atoms {
            integral += w * local_generator(coeffs, Side::Nonlinear, t, x, view, h)?;
        }
        total += df[k] * integral;
    }
    Ok(total)
}

/// [`measure_generator`] at a grid density (midpoint quadrature).
pub fn apply_measure_generator(f: &CylindricalFunction, mu: &GridDensity1D, coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    measure_generator(f, &MeasureView::of_grid(mu), coeffs, t)
}

/// `𝐋̃ₜG(x, μ) = F(μ)·L̄_{t,μ}h₀(x) + h₀(x)·𝐋ₜF(μ)`.
pub fn lifted_generator(g: &LiftedTestFunction, x: &[f64], view: &MeasureView<'_>, coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    let fmu = g.f.evaluate(view.law());
    let spatial = if fmu == 0.0 { 0.0 } else { fmu * companion_operator(coeffs, t, x, view, &g.h0)? };
    let h0 = g.h0.eval(x);
    let measure = if h0 == 0.0 { 0.0 } else { h0 * measure_generator(&g.f, view, coeffs, t)? };
    Ok(spatial + measure)
}

pub fn apply_lifted_generator(g: &LiftedTestFunction, x: &[f64], mu: &GridDensity1D, coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    lifted_generator(g, x, &MeasureView::of_grid(mu), coeffs, t)
}

/// The spatial factor of a product law.
#[derive(Clone, Debug, PartialEq)]
pub enum SpatialLaw {
    Grid(GridDensity1D),
    Cloud(EmpiricalMeasure),
}

impl SpatialLaw {
    pub fn law(&self) -> Law<'_> {
        match self {
            SpatialLaw::Grid(g) => Law::Grid(g),
            SpatialLaw::Cloud(c) => Law::Cloud(c),
        }
    }

    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.law().integrate(f)
    }

    pub fn mean(&self) -> f64 {
        self.law().moments().mean[0]
    }
}

/// `Λ = ν × δ_μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductLaw {
    pub spatial: SpatialLaw,
    pub measure_atom: GridDensity1D,
}

impl ProductLaw {
    /// `∫ G dΛ = ν(h₀)·F(μ)`.
    pub fn integrate(&self, g: &LiftedTestFunction) -> f64 {
        self.spatial.integrate(|x| g.h0.eval(x)) * g.f.evaluate(&self.measure_atom)
    }
}

/// `𝐏_{s,t}(x, ζ; ·)` together with its source.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovKernelState {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub zeta: GridDensity1D,
    pub value: ProductLaw,
    /// Width of the approximate Dirac used as initial data (FPE backend).
    pub mollifier_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub s: f64,
    pub t: f64,
    pub x: f64,
    pub mollifier_width: Option<f64>,
    pub spatial_mean: f64,
    pub spatial_variance: f64,
    pub atom_mean: f64,
    pub atom_variance: f64,
}

impl MarkovKernelState {
    pub fn integrate(&self, g: &LiftedTestFunction) -> f64 {
        self.value.integrate(g)
    }

    pub fn summary(&self) -> KernelSummary {
        let m = self.value.spatial.law().moments();
        KernelSummary {
            s: self.s,
            t: self.t,
            x: self.x,
            mollifier_width: self.mollifier_width,
            spatial_mean: m.mean[0],
            spatial_variance: m.covariance[0],
            atom_mean: self.value.measure_atom.mean(),
            atom_variance: self.value.measure_atom.variance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelBackend {
    Fpe,
    Particle { sim: SimConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub fpe: SolverConfig,
    #[serde(default)]
    pub mollifier: Mollifier,
    #[serde(default = "default_backend")]
    pub backend: KernelBackend,
    #[serde(default)]
    pub execution: Execution,
}

fn default_backend() -> KernelBackend {
    KernelBackend::Fpe
}

impl KernelConfig {
    pub fn fpe(fpe: SolverConfig) -> Self {
        Self { fpe, mollifier: Mollifier::default(), backend: KernelBackend::Fpe, execution: Execution::Parallel }
    }

    fn flow_config(&self) -> SolverConfig {
        self.fpe.clone().recording(Record::EveryStep)
    }

    fn endpoint_config(&self) -> SolverConfig {
        self.fpe.clone().recording(Record::At(Vec::new()))
    }
}

/// The nonlinear flow of ζ on `[s, t]`, recorded every step.
pub fn kernel_flow(zeta: &GridDensity1D, s: f64, t: f64, coeffs: &CoefficientSet, cfg: &KernelConfig) -> Result<DensityPath> {
    solve_nonlinear_fpe(zeta, coeffs, s, t, &cfg.flow_config())
}

/// Kernel value from `x` at `s` to `t`, reusing a flow that covers `[s, t]`.
pub fn kernel_on_flow(x: f64, flow: &DensityPath, s: f64, t: f64, coeffs: &CoefficientSet, cfg: &KernelConfig) -> Result<MarkovKernelState> {
    let zeta = flow.state_at(s)?;
    let atom = flow.state_at(t)?;
    let (spatial, width) = match &cfg.backend {
        KernelBackend::Fpe => {
            let nu0 = GridDensity1D::dirac(*flow.grid(), x, cfg.mollifier)?;
            let nu = solve_frozen_fpe_on(&nu0, flow, coeffs, s, t, &cfg.endpoint_config())?;
            (SpatialLaw::Grid(nu.last().clone()), Some(cfg.mollifier.width(flow.grid().dx)))
        }
        KernelBackend::Particle { sim } => {
            let sim = sim.clone().recording(Record::At(Vec::new()));
            let ens = simulate_frozen(&EmpiricalMeasure::dirac(&[x]), flow, coeffs, s, t, &sim)?;
            (SpatialLaw::Cloud(marginal(&ens, t)?), None)
        }
    };
    Ok(MarkovKernelState { s, t, x, zeta, value: ProductLaw { spatial, measure_atom: atom }, mollifier_width: width })
}

/// `𝐏_{s,t}(x, ζ; ·) = ν^{ζ,δₓ}_{s,t} × δ_{μ^ζ_{s,t}}`.
pub fn kernel_evaluate(x: f64, zeta: &GridDensity1D, s: f64, t: f64, coeffs: &CoefficientSet, cfg: &KernelConfig) -> Result<MarkovKernelState> {
    let flow = kernel_flow(zeta, s, t, coeffs, cfg)?;
    kernel_on_flow(x, &flow, s, t, coeffs, cfg)
}

/// Collapses a grid density onto at most `k` weighted points: cells are cut
/// into consecutive strata of (nearly) equal mass and each stratum is
/// represented by its mass and barycenter. With `k` at least the number of
/// charged cells every cell center is its own node.
pub fn stratified_nodes(rho: &GridDensity1D, k: usize) -> Vec<(f64, f64)> {
    let g = rho.grid();
    let cells: Vec<(f64, f64)> =
        rho.values().iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, v)| (g.center(i), v * g.dx)).collect();
    if k >= cells.len() {
        return cells;
    }
    let total: f64 = cells.iter().map(|c| c.1).sum();
    let mut strata = vec![(0.0f64, 0.0f64); k];
    let mut before = 0.0;
    for &(x, w) in &cells {
        let j = (((before + 0.5 * w) / total) * k as f64).floor().min(k as f64 - 1.0) as usize;
        strata[j].0 += w;
        strata[j].1 += w * x;
        before += w;
    }
    strata.into_iter().filter(|s| s.0 > 0.0).map(|(w, wx)| (wx / w, w)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkReport {
    pub x: f64,
    pub s: f64,
    pub r: f64,
    pub t: f64,
    /// `∫G d𝐏_{s,t}(x, ζ)`.
    pub direct: f64,
    /// `∬G d𝐏_{r,t}(y, μ) d𝐏_{s,r}(x, ζ; dy, dμ)`.
    pub composed: f64,
    pub residual: f64,
    pub quad_points: usize,
    pub dt: f64,
    pub dx: f64,
}

/// Chapman–Kolmogorov residual for one source point and one test function.
/// The middle integral runs over quadrature nodes of `ν^{ζ,δₓ}_{s,r}`, one
/// kernel solve per node.
#[allow(clippy::too_many_arguments)]
pub fn chapman_kolmogorov_residual(
    x: f64,
    zeta: &GridDensity1D,
    s: f64,
    r: f64,
    t: f64,
    coeffs: &CoefficientSet,
    g: &LiftedTestFunction,
    quad_points: usize,
    cfg: &KernelConfig,
) -> Result<CkReport> {
    if !(s < r && r < t) {
        return Err(Error::InvalidArgument(format!("need s < r < t, got {s}, {r}, {t}")));
    }
    if quad_points == 0 {
        return Err(Error::InvalidArgument("quad_points must be positive".into()));
    }
    let flow = kernel_flow(zeta, s, t, coeffs, cfg)?;
    let direct = kernel_on_flow(x, &flow, s, t, coeffs, cfg)?.integrate(g);
    let middle = kernel_on_flow(x, &flow, s, r, coeffs, cfg)?;
    let mu_r = middle.value.measure_atom.clone();
    let flow_r = kernel_flow(&mu_r, r, t, coeffs, cfg)?;
    let nodes: Vec<(f64, f64)> = match &middle.value.spatial {
        SpatialLaw::Grid(nu) => stratified_nodes(nu, quad_points),
        SpatialLaw::Cloud(c) => {
            let atoms = c.sorted_atoms_1d();
            let rho_cells = atoms.len();
            if quad_points >= rho_cells {
                atoms
            } else {
                // equal-count strata of the sorted cloud
                let per = rho_cells.div_ceil(quad_points);
                atoms
                    .chunks(per)
                    .map(|ch| {
                        let w: f64 = ch.iter().map(|a| a.1).sum();
                        (ch.iter().map(|a| a.0 * a.1).sum::<f64>() / w, w)
                    })
                    .collect()
            }
        }
    };
    let values = try_map_indexed(cfg.execution, nodes.len(), |i| {
        let (y, w) = nodes[i];
        Ok(w * kernel_on_flow(y, &flow_r, r, t, coeffs, cfg)?.integrate(g))
    })?;
    let composed: f64 = values.iter().sum();
    Ok(CkReport {
        x,
        s,
        r,
        t,
        direct,
        composed,
        residual: (direct - composed).abs(),
        quad_points: nodes.len(),
        dt: cfg.fpe.dt,
        dx: zeta.grid().dx,
    })
}

/// Weak residual of `Λₜ = νₜ × δ_{μₜ}` against `G`:
/// `Λₜ(G) − Λₛ(G) − ∫ₛᵗ Λᵣ(𝐋̃ᵣG) dr` at each stored time of `nu`
/// (trapezoidal rule). `mu` must cover the times of `nu`.
pub fn product_weak_residual(nu: &DensityPath, mu: &DensityPath, coeffs: &CoefficientSet, g: &LiftedTestFunction) -> Result<Vec<(f64, f64)>> {
    let mut values = Vec::with_capacity(nu.len());
    let mut gens = Vec::with_capacity(nu.len());
    for (k, &t) in nu.times().iter().enumerate() {
        let m = mu.state_at(t)?;
        let view = MeasureView::of_grid(&m);
        let state = &nu.states()[k];
        let fmu = g.f.evaluate(&m);
        let lf = measure_generator(&g.f, &view, coeffs, t)?;
        let grid = state.grid();
        let (mut nu_h, mut nu_lh) = (0.0, 0.0);
        for (i, &v) in state.values().iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let x = [grid.center(i)];
            nu_h += v * grid.dx * g.h0.eval(&x);
            nu_lh += v * grid.dx * companion_operator(coeffs, t, &x, &view, &g.h0)?;
        }
        values.push(nu_h * fmu);
        gens.push(nu_lh * fmu + nu_h * lf);
    }
    let times = nu.times();
    let mut integral = 0.0;
    let mut out = vec![(times[0], 0.0)];
    for k in 1..times.len() {
        integral += 0.5 * (times[k] - times[k - 1]) * (gens[k] + gens[k - 1]);
        out.push((times[k], values[k] - values[0] - integral));
    }
    Ok(out)
}

/// `d/dt F(μₜ)` by central differences over stored times against `𝐋ₜF(μₜ)`,
/// at the interior stored times of an FPE path.
pub fn measure_generator_consistency(f: &CylindricalFunction, path: &DensityPath, coeffs: &CoefficientSet) -> Result<Vec<GeneratorCheck>> {
    let values: Vec<f64> = path.states().iter().map(|s| f.evaluate(s)).collect();
    let times = path.times();
    (1..times.len().saturating_sub(1))
        .map(|k| {
            let derivative = (values[k + 1] - values[k - 1]) / (times[k + 1] - times[k - 1]);
            let generator = apply_measure_generator(f, &path.states()[k], coeffs, times[k])?;
            Ok(GeneratorCheck { t: times[k], derivative, generator, stderr: 0.0 })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    pub t: f64,
    /// Finite-difference time derivative of the expectation.
    pub derivative: f64,
    /// Average of the generator applied to the test function.
    pub generator: f64,
    /// Combined Monte Carlo standard error of the two sides.
    pub stderr: f64,
}

impl GeneratorCheck {
    pub fn residual(&self) -> f64 {
        (self.derivative - self.generator).abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoConfig {
    pub fpe: SolverConfig,
    pub sim: SimConfig,
    /// Half-width of the central time difference.
    pub fd_step: f64,
    pub checkpoints: Vec<f64>,
}

/// Compares `d/dt 𝔼 f(Xₜ, μₜ)` (central differences of Monte Carlo means)
/// with `𝔼 𝐋̃ₜ f(Xₜ, μₜ)`, where `μ` is the FPE flow of `mu0` and `X` runs the
/// companion dynamics against it from `x0`.
pub fn lifted_ito_consistency(
    f: &LiftedTestFunction,
    x0: f64,
    mu0: &GridDensity1D,
    coeffs: &CoefficientSet,
    horizon: f64,
    cfg: &ItoConfig,
) -> Result<Vec<GeneratorCheck>> {
    let delta = cfg.fd_step;
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("fd_step must be positive".into()));
    }
    for &c in &cfg.checkpoints {
        if c - delta < 0.0 || c + delta > horizon {
            return Err(Error::InvalidArgument(format!("checkpoint {c} ± {delta} leaves [0, {horizon}]")));
        }
    }
    let mut probes: Vec<f64> = cfg.checkpoints.iter().flat_map(|&c| [c - delta, c, c + delta]).collect();
    probes.sort_by(f64::total_cmp);
    let flow = solve_nonlinear_fpe(mu0, coeffs, 0.0, horizon, &cfg.fpe.clone().recording(Record::EveryStep))?;
    let sim = cfg.sim.clone().recording(Record::At(probes));
    let ens = simulate_frozen(&EmpiricalMeasure::dirac(&[x0]), &flow, coeffs, 0.0, horizon, &sim)?;
    cfg.checkpoints
        .iter()
        .map(|&c| {
            let k = |t: f64| ens.nearest_index(t);
            let (km, k0, kp) = (k(c - delta), k(c), k(c + delta));
            let mu_m = flow.state_at(ens.times()[km])?;
            let mu_p = flow.state_at(ens.times()[kp])?;
            let mu_c = flow.state_at(ens.times()[k0])?;
            let (fm, fp) = (f.f.evaluate(&mu_m), f.f.evaluate(&mu_p));
            let span = ens.times()[kp] - ens.times()[km];
            let diffs: Vec<f64> = (0..ens.replicas())
                .map(|r| (f.h0.eval(ens.position(r, kp)) * fp - f.h0.eval(ens.position(r, km)) * fm) / span)
                .collect();
            let view = MeasureView::of_grid(&mu_c);
            let tc = ens.times()[k0];
            let gens: Vec<f64> = (0..ens.replicas()).map(|r| lifted_generator(f, ens.position(r, k0), &view, coeffs, tc)).collect::<Result<_>>()?;
            let (md, sd) = mean_and_stderr(&diffs);
            let (mg, sg) = mean_and_stderr(&gens);
            Ok(GeneratorCheck { t: tc, derivative: md, generator: mg, stderr: sd + sg })
        })
        .collect()
}

pub(crate) fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
