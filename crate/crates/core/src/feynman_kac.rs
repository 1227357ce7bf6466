//! Monte-Carlo evaluation of the Feynman–Kac representation
//!
//! `u(t, x, μ) = 𝔼[Φ(X_T, μ_T) e^{∫ₜᵀ V} + ∫ₜᵀ f(r, X_r, μ_r) e^{∫ₜʳ V} dr]`
//!
//! where `μ_r = P*_{t,r} μ` is the nonlinear flow and `X` follows the
//! companion dynamics frozen along it from `X_t = x`. The backward equation
//! `∂ₜu + 𝐋̃ₜu + V u + f = 0` is checked by finite differences of the
//! estimator under common random numbers.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, MeasureView, Side};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Execution};
use crate::fpe::{solve_nonlinear_fpe, Record, SolverConfig};
use crate::measure::{EmpiricalMeasure, GridDensity1D, GridSpec, Law};
use crate::particle::{simulate_mckean_vlasov, Flow, OwnedLaw, SimConfig};
use crate::rng;

pub type PotentialFn = dyn Fn(f64, &[f64], &MeasureView<'_>) -> f64 + Send + Sync;
pub type TerminalFn = dyn Fn(&[f64], &MeasureView<'_>) -> f64 + Send + Sync;

/// Relative floor of the tower-property tolerance for zero-variance cases.
pub const ROUNDOFF: f64 = 1e-12;

/// Default measure step of [`FdSteps`].
pub const EPS_MEASURE: f64 = 1e-3;

#[derive(Clone)]
pub struct FkProblem {
    pub label: String,
    pub coeffs: CoefficientSet,
    pub horizon: f64,
    pub terminal: Arc<TerminalFn>,
    /// Potential and its declared bound on `|V|`.
    pub potential: Option<(Arc<PotentialFn>, f64)>,
    pub source: Option<Arc<PotentialFn>>,
}

impl std::fmt::Debug for FkProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FkProblem").field("label", &self.label).field("horizon", &self.horizon).finish_non_exhaustive()
    }
}

impl FkProblem {
    pub fn new(label: impl Into<String>, coeffs: CoefficientSet, horizon: f64, terminal: Arc<TerminalFn>) -> Self {
        Self { label: label.into(), coeffs, horizon, terminal, potential: None, source: None }
    }

    pub fn with_potential(mut self, v: Arc<PotentialFn>, bound: f64) -> Self {
        self.potential = Some((v, bound));
        self
    }

    pub fn with_source(mut self, f: Arc<PotentialFn>) -> Self {
        self.source = Some(f);
        self
    }

    fn potential_at(&self, t: f64, x: &[f64], view: &MeasureView<'_>) -> f64 {
        self.potential.as_ref().map_or(0.0, |(v, _)| v(t, x, view))
    }

    fn source_at(&self, t: f64, x: &[f64], view: &MeasureView<'_>) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f(t, x, view))
    }
}

/// Where the flow `P*_{t,r} μ` comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowBackend {
    /// The solver's scheme and safety factor are used; it steps on the
    /// replica time nodes.
    Fpe { solver: SolverConfig },
    /// Interacting particles; `kde` supplies density views when needed.
    Particle { sim: SimConfig, kde: Option<(GridSpec, f64)> },
}

/// `sim.n_particles` is the number of replicas, `sim.dt` their time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkConfig {
    pub sim: SimConfig,
    pub flow: FlowBackend,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_replicas: usize,
    pub config_hash: String,
}

/// Mean and `sd / √n` (unbiased variance).
pub(crate) fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `n` equal steps from `t` to `T`.
fn nodes(t: f64, horizon: f64, n: usize) -> Vec<f64> {
    if horizon <= t || n == 0 {
        return vec![t];
    }
    let h = (horizon - t) / n as f64;
    let mut out: Vec<f64> = (0..n).map(|k| t + k as f64 * h).collect();
    out.push(horizon);
    out
}

/// Number of steps of length at most `dt` covering `[t, T]`.
pub fn default_steps(t: f64, horizon: f64, dt: f64) -> usize {
    ((horizon - t) / dt - 1e-9).ceil().max(0.0) as usize
}

/// One flow from `(t, μ)` and the replicas that read it. Estimates at
/// different `x` reuse the flow and the replica noise. Replica `r` always
/// draws the same normals `z₀, z₁, …`; step `k` of a batch with `n` steps
/// over `[t, T]` uses `z_k √((T − t)/n)`, so batches with equal `n` but
/// different start times are driven by one Brownian path rescaled in time.
pub struct FkBatch<'p> {
    problem: &'p FkProblem,
    cfg: FkConfig,
    t: f64,
    nodes: Vec<f64>,
    laws: Vec<OwnedLaw>,
    hash: u64,
}

impl<'p> FkBatch<'p> {
    pub fn new(problem: &'p FkProblem, t: f64, mu: Law<'_>, cfg: &FkConfig) -> Result<Self> {
        Self::with_steps(problem, t, mu, cfg, default_steps(t, problem.horizon, cfg.sim.dt))
    }

    pub fn with_steps(problem: &'p FkProblem, t: f64, mu: Law<'_>, cfg: &FkConfig, steps: usize) -> Result<Self> {
        let horizon = problem.horizon;
        if !(t <= horizon) || !t.is_finite() {
            return Err(Error::OutsideHorizon { t, start: f64::NEG_INFINITY, end: horizon });
        }
        if cfg.sim.n_particles == 0 || !(cfg.sim.dt > 0.0) {
            return Err(Error::InvalidArgument("need at least one replica and a positive dt".into()));
        }
        if mu.dim() != problem.coeffs.dim() {
            return Err(Error::DimensionMismatch { expected: problem.coeffs.dim(), got: mu.dim() });
        }
        let nodes = nodes(t, horizon, steps);
        let interior: Vec<f64> = nodes[1..nodes.len().saturating_sub(1)].to_vec();
        let laws = match &cfg.flow {
            FlowBackend::Fpe { solver } => {
                let Law::Grid(g) = mu else {
                    return Err(Error::InvalidArgument("the grid flow backend needs a grid density".into()));
                };
                // one solver step per replica step
                let h = if steps > 0 { (horizon - t) / steps as f64 } else { solver.dt };
                let solver = SolverConfig { dt: h * (1.0 + 1e-9), ..solver.clone() }.recording(Record::At(interior));
                let path = solve_nonlinear_fpe(g, &problem.coeffs, t, horizon, &solver)?;
                nodes.iter().map(|&s| Ok(OwnedLaw::Grid(path.state_at(s)?))).collect::<Result<Vec<_>>>()?
            }
            FlowBackend::Particle { sim, kde } => {
                let cloud = match mu {
                    Law::Cloud(c) => c.clone(),
                    Law::Grid(g) => g.sample(sim.n_particles, &mut rng::stream(rng::derive_seed(sim.seed, 0xf10), 0))?,
                };
                let ens = simulate_mckean_vlasov(&cloud, &problem.coeffs, t, horizon, &sim.clone().recording(Record::At(interior)))?;
                let flow = Flow::Ensemble { ensemble: &ens, kde: *kde };
                nodes.iter().map(|&s| flow.law_at(s)).collect::<Result<Vec<_>>>()?
            }
        };
        let summary = mu.moments();
        // results do not depend on the execution mode, so neither does the hash
        let mut hashed = cfg.clone();
        hashed.sim.execution = Execution::default();
        if let FlowBackend::Particle { sim, .. } = &mut hashed.flow {
            sim.execution = Execution::default();
        }
        let key = serde_json::json!({
            "problem": problem.label,
            "horizon": horizon,
            "t": t,
            "steps": steps,
            "mu_mean": summary.mean,
            "mu_m2": summary.second_moment,
            "config": hashed,
        });
        let hash = fnv1a(key.to_string().as_bytes());
        Ok(Self { problem, cfg: cfg.clone(), t, nodes, laws, hash })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// The flow at the batch's time nodes.
    pub fn flow_law(&self, k: usize) -> MeasureView<'_> {
        self.laws[k].view()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// One sample per replica, in replica order.
    pub fn samples(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let d = p.coeffs.dim();
        let m = p.coeffs.noise_dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let views: Vec<MeasureView<'_>> = self.laws.iter().map(OwnedLaw::view).collect();
        let n = self.nodes.len() - 1;
        let sim = &self.cfg.sim;
        try_map_indexed(sim.execution, sim.n_particles, |r| {
            let id = sim.stream_ids.as_ref().map_or(r as u64, |ids| ids[r]);
            let mut stream = rng::stream(sim.seed, id);
            let z: Vec<f64> = (0..n * m).map(|_| rng::normal(&mut stream)).collect();
            let mut xr = x.to_vec();
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * m];
            let mut iv: f64 = 0.0;
            let mut integral_f = 0.0;
            for j in 0..n {
                let (t0, t1) = (self.nodes[j], self.nodes[j + 1]);
                let h = t1 - t0;
                let view = &views[j];
                if let Some((v, bound)) = &p.potential {
                    let value = v(t0, &xr, view);
                    if !(value.abs() <= *bound) {
                        return Err(Error::UnboundedPotential { value, bound: *bound, replica: r, time: t0, x: xr.clone() });
                    }
                    integral_f += p.source_at(t0, &xr, view) * iv.exp() * h;
                    iv += value * h;
                } else {
                    integral_f += p.source_at(t0, &xr, view) * h;
                }
                let wrap = |e: Error| Error::CoefficientEvaluation { index: r, time: t0, reason: e.to_string() };
                p.coeffs.drift_into(Side::Companion, t0, &xr, view, &mut b).map_err(wrap)?;
                p.coeffs.diffusion_into(Side::Companion, t0, &xr, view, &mut s).map_err(wrap)?;
                let sqrt_h = h.sqrt();
                for i in 0..d {
                    let noise: f64 = (0..m).map(|l| s[i * m + l] * z[j * m + l]).sum();
                    xr[i] += b[i] * h + noise * sqrt_h;
                }
            }
            let value = (p.terminal)(&xr, &views[n]) * iv.exp() + integral_f;
            if !value.is_finite() {
                return Err(Error::CoefficientEvaluation { index: r, time: p.horizon, reason: "non-finite replica value".into() });
            }
            Ok(value)
        })
    }

    pub fn estimate(&self, x: &[f64]) -> Result<FkEstimate> {
        let samples = self.samples(x)?;
        let (value, stderr) = mean_stderr(&samples);
        Ok(FkEstimate { value, stderr, n_replicas: samples.len(), config_hash: format!("{:016x}", self.hash) })
    }
}

/// `u(t, x, μ)` with its Monte-Carlo standard error.
pub fn fk_evaluate(p: &FkProblem, t: f64, x: &[f64], mu: Law<'_>, cfg: &FkConfig) -> Result<FkEstimate> {
    FkBatch::new(p, t, mu, cfg)?.estimate(x)
}

/// Central difference of `g` along the pushforward curve `μ∘(Id + εφ)^{-1}`.
pub fn l_derivative_fd<G, P>(g: G, mu: &EmpiricalMeasure, phi: P, eps: f64) -> f64
where
    G: Fn(&EmpiricalMeasure) -> f64,
    P: Fn(&[f64]) -> Vec<f64>,
{
    (g(&mu.pushforward(&phi, eps)) - g(&mu.pushforward(&phi, -eps))) / (2.0 * eps)
}

/// Finite-difference steps of [`pde_residual`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdSteps {
    pub dt_fd: f64,
    pub dx_fd: f64,
    #[serde(default = "default_eps_measure")]
    pub eps_measure: f64,
    /// Largest standard error a single finite-difference term may carry.
    #[serde(default = "default_noise_cap")]
    pub noise_cap: f64,
}

fn default_eps_measure() -> f64 {
    EPS_MEASURE
}

fn default_noise_cap() -> f64 {
    0.1
}

impl FdSteps {
    pub fn new(dt_fd: f64, dx_fd: f64) -> Self {
        Self { dt_fd, dx_fd, eps_measure: EPS_MEASURE, noise_cap: default_noise_cap() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerms {
    pub u: f64,
    pub time: f64,
    pub spatial: f64,
    pub measure: f64,
    pub potential: f64,
    pub source: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeResidual {
    pub residual: f64,
    /// Standard error of the residual under common random numbers.
    pub stderr: f64,
    pub terms: ResidualTerms,
    /// Standard errors of the time, spatial and measure terms.
    pub term_stderr: [f64; 3],
    /// `dt_fd + dx_fd² + eps_measure + dt`, the order of the truncation error.
    pub truncation_scale: f64,
    pub config_hash: String,
}

impl PdeResidual {
    /// `c · truncation_scale + 3 · stderr`.
    pub fn budget(&self, c: f64) -> f64 {
        c * self.truncation_scale + 3.0 * self.stderr
    }
}

/// Owned measure argument of the residual probe.
#[derive(Clone, Debug)]
pub enum ProbeLaw {
    Grid(GridDensity1D),
    Cloud(EmpiricalMeasure),
}

impl ProbeLaw {
    pub fn law(&self) -> Law<'_> {
        match self {
            ProbeLaw::Grid(g) => Law::Grid(g),
            ProbeLaw::Cloud(c) => Law::Cloud(c),
        }
    }
}

/// Transport velocity `ψ = b − ½ ∂ᵧ(a ρ)/ρ` of the nonlinear equation at
/// `(t, μ)`, evaluated at the atoms of `atoms`; `∫ DF·ψ dμ` is the measure
/// part of the lifted generator.
fn transport_velocity(coeffs: &CoefficientSet, t: f64, density: &GridDensity1D, view: &MeasureView<'_>, atoms: &EmpiricalMeasure) -> Result<Vec<f64>> {
    let g = *density.grid();
    let mut flux = vec![0.0; g.n];
    for (i, f) in flux.iter_mut().enumerate() {
        *f = coeffs.diffusivity_1d(Side::Nonlinear, t, g.center(i), view)? * density.values()[i];
    }
    let mut out = Vec::with_capacity(atoms.len());
    let mut b = [0.0];
    for (y, _) in atoms.iter() {
        coeffs.drift_into(Side::Nonlinear, t, y, view, &mut b)?;
        let i = g.nearest_cell(y[0]);
        let rho = density.values()[i];
        let correction = if rho > 0.0 && i > 0 && i + 1 < g.n {
            0.5 * (flux[i + 1] - flux[i - 1]) / (2.0 * g.dx) / rho
        } else {
            0.0
        };
        out.push(b[0] - correction);
    }
    Ok(out)
}

/// The probe law pushed forward by `Id + ε ψ`.
fn pushed(law: &ProbeLaw, atoms: &EmpiricalMeasure, psi: &[f64], eps: f64) -> Result<ProbeLaw> {
    let points: Vec<f64> = atoms.points().iter().zip(psi).map(|(y, v)| y + eps * v).collect();
    let moved = EmpiricalMeasure::new(1, points, atoms.weights().to_vec())?;
    Ok(match law {
        ProbeLaw::Grid(g) => ProbeLaw::Grid(GridDensity1D::deposit(*g.grid(), &moved)?),
        ProbeLaw::Cloud(_) => ProbeLaw::Cloud(moved),
    })
}

fn checked(name: &str, step: f64, se: f64, cap: f64) -> Result<()> {
    if se > cap {
        return Err(Error::FiniteDifferenceStep(format!(
            "{name} = {step:e} is below the Monte-Carlo noise floor: the difference quotient carries standard error {se:.3e} > {cap:.3e} \
             even with common random numbers; enlarge the step or the replica count"
        )));
    }
    Ok(())
}

/// `∂ₜu + 𝐋̃ₜu + V u + f` at `(t, x, μ)` from finite differences of
/// [`fk_evaluate`]: central differences in `t` and `x`, and a Richardson
/// extrapolated pushforward difference along the transport velocity for the
/// measure part. All probes share the replica noise. One-dimensional only.
pub fn pde_residual(p: &FkProblem, t: f64, x: f64, mu: &ProbeLaw, steps: FdSteps, cfg: &FkConfig) -> Result<PdeResidual> {
    if p.coeffs.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: p.coeffs.dim() });
    }
    let FdSteps { dt_fd: tau, dx_fd: delta, eps_measure: eps, noise_cap } = steps;
    if !(tau > 0.0 && delta > 0.0 && eps > 0.0) {
        return Err(Error::FiniteDifferenceStep("steps must be positive".into()));
    }
    if t + tau > p.horizon {
        return Err(Error::FiniteDifferenceStep(format!("t + dt_fd = {} passes the horizon {}", t + tau, p.horizon)));
    }
    let center = FkBatch::new(p, t, mu.law(), cfg)?;
    let u0 = center.samples(&[x])?;
    let up = center.samples(&[x + delta])?;
    let um = center.samples(&[x - delta])?;
    let n = center.nodes.len() - 1;
    let later = FkBatch::with_steps(p, t + tau, mu.law(), cfg, n)?.samples(&[x])?;
    let earlier = FkBatch::with_steps(p, t - tau, mu.law(), cfg, n)?.samples(&[x])?;

    // measure direction
    let view0 = center.flow_law(0);
    let (density, atoms) = match mu {
        ProbeLaw::Grid(g) => (g.clone(), g.to_measure()),
        ProbeLaw::Cloud(c) => {
            let grid = match &cfg.flow {
                FlowBackend::Particle { kde: Some((grid, _)), .. } => *grid,
                _ => {
                    let xs = c.positions_1d();
                    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    GridSpec::covering(lo - 1.0 - 0.25 * (hi - lo), hi + 1.0 + 0.25 * (hi - lo), 1e-2)?
                }
            };
            let h = crate::measure::default_bandwidth(c).max(grid.dx);
            (crate::measure::kde_density(c, &grid, h)?, c.clone())
        }
    };
    let psi = transport_velocity(&p.coeffs, t, &density, &view0, &atoms)?;
    let mut shifted = Vec::with_capacity(4);
    for e in [eps, -eps, 0.5 * eps, -0.5 * eps] {
        let law = pushed(mu, &atoms, &psi, e)?;
        shifted.push(FkBatch::new(p, t, law.law(), cfg)?.samples(&[x])?);
    }

    let mut b = [0.0];
    p.coeffs.drift_into(Side::Companion, t, &[x], &view0, &mut b)?;
    let a = p.coeffs.diffusivity_1d(Side::Companion, t, x, &view0)?;
    let v = p.potential_at(t, &[x], &view0);
    let f = p.source_at(t, &[x], &view0);

    let r = u0.len();
    let mut time = Vec::with_capacity(r);
    let mut spatial = Vec::with_capacity(r);
    let mut measure = Vec::with_capacity(r);
    let mut total = Vec::with_capacity(r);
    for k in 0..r {
        let dt_term = (later[k] - earlier[k]) / (2.0 * tau);
        let ux = (up[k] - um[k]) / (2.0 * delta);
        let uxx = (up[k] - 2.0 * u0[k] + um[k]) / (delta * delta);
        let d_full = (shifted[0][k] - shifted[1][k]) / (2.0 * eps);
        let d_half = (shifted[2][k] - shifted[3][k]) / eps;
        let meas = (4.0 * d_half - d_full) / 3.0;
        let sp = b[0] * ux + 0.5 * a * uxx;
        time.push(dt_term);
        spatial.push(sp);
        measure.push(meas);
        total.push(dt_term + sp + meas + v * u0[k] + f);
    }
    let (time_mean, time_se) = mean_stderr(&time);
    let (spatial_mean, spatial_se) = mean_stderr(&spatial);
    let (measure_mean, measure_se) = mean_stderr(&measure);
    checked("dt_fd", tau, time_se, noise_cap)?;
    checked("dx_fd", delta, spatial_se, noise_cap)?;
    checked("eps_measure", eps, measure_se, noise_cap)?;
    let (u_mean, _) = mean_stderr(&u0);
    let (residual, stderr) = mean_stderr(&total);
    Ok(PdeResidual {
        residual,
        stderr,
        terms: ResidualTerms { u: u_mean, time: time_mean, spatial: spatial_mean, measure: measure_mean, potential: v * u_mean, source: f },
        term_stderr: [time_se, spatial_se, measure_se],
        truncation_scale: tau + delta * delta + eps + cfg.sim.dt,
        config_hash: format!("{:016x}", center.hash),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerReport {
    pub direct: FkEstimate,
    pub composed: FkEstimate,
    pub probe_stderr: f64,
    /// Bound on the linear-interpolation error of the intermediate data.
    pub interpolation_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `u(t, x, μ)` with the problem restarted at `r`: terminal data
/// `u(r, ·, μ_r)` estimated at `probes` (sorted) and interpolated linearly,
/// flat outside. Agreement within `3·√(Σ se²) + interpolation_error` plus a
/// relative roundoff floor.
pub fn tower_check(p: &FkProblem, t: f64, r: f64, x: f64, mu: &ProbeLaw, probes: &[f64], cfg: &FkConfig) -> Result<TowerReport> {
    if !(t < r && r < p.horizon) {
        return Err(Error::InvalidArgument(format!("need t < r < T, got {t}, {r}, {}", p.horizon)));
    }
    if probes.len() < 2 || probes.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("need at least two increasing probe points".into()));
    }
    let direct = fk_evaluate(p, t, &[x], mu.law(), cfg)?;
    let to_r = FkProblem { horizon: r, ..p.clone() };
    let flow_to_r = FkBatch::new(&to_r, t, mu.law(), cfg)?;
    let mu_r = match &flow_to_r.laws[flow_to_r.laws.len() - 1] {
        OwnedLaw::Grid(g) => ProbeLaw::Grid(g.clone()),
        OwnedLaw::Cloud(c, _) => ProbeLaw::Cloud(c.clone()),
    };
    let later = FkBatch::new(p, r, mu_r.law(), cfg)?;
    let mut values = Vec::with_capacity(probes.len());
    let mut probe_stderr: f64 = 0.0;
    for &y in probes {
        let e = later.estimate(&[y])?;
        probe_stderr = probe_stderr.max(e.stderr);
        values.push(e.value);
    }
    let mut interpolation_error: f64 = 0.0;
    for k in 1..probes.len() - 1 {
        let (h0, h1) = (probes[k] - probes[k - 1], probes[k + 1] - probes[k]);
        let second = 2.0 * ((values[k + 1] - values[k]) / h1 - (values[k] - values[k - 1]) / h0) / (h0 + h1);
        interpolation_error = interpolation_error.max(second.abs() * h0.max(h1).powi(2) / 8.0);
    }
    let (xs, ys) = (Arc::new(probes.to_vec()), Arc::new(values));
    let terminal: Arc<TerminalFn> = Arc::new(move |y, _| interpolate(&xs, &ys, y[0]));
    let restarted = FkProblem { horizon: r, terminal, ..p.clone() };
    let composed_cfg = FkConfig { sim: SimConfig { seed: rng::derive_seed(cfg.sim.seed, 0x70e7), ..cfg.sim.clone() }, ..cfg.clone() };
    let composed = fk_evaluate(&restarted, t, &[x], mu.law(), &composed_cfg)?;
    let tolerance = 3.0 * (direct.stderr.powi(2) + composed.stderr.powi(2) + probe_stderr.powi(2)).sqrt()
        + interpolation_error
        + ROUNDOFF * direct.value.abs().max(1.0);
    let passed = (direct.value - composed.value).abs() <= tolerance;
    Ok(TowerReport { direct, composed, probe_stderr, interpolation_error, tolerance, passed })
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[xs.len() - 1] {
        return ys[ys.len() - 1];
    }
    let k = xs.partition_point(|&v| v <= x);
    let w = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}
