//! Long-time behaviour for time-homogeneous coefficients: invariant laws,
//! measured 𝕎₂ decay of both components, and the exponential envelope.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Family, MonotonicityConstants};
use crate::cylindrical::TestFn;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::fpe::{solve_frozen_fpe, solve_nonlinear_fpe, DensityPath, Record, SolverConfig};
use crate::measure::gaussian::{w2_cloud_to_gaussian, w2_grid_to_gaussian};
use crate::measure::io::fmt_f64;
use crate::measure::{wasserstein2, wasserstein2_cloud_grid, wasserstein2_grids, EmpiricalMeasure, GridDensity1D, GridSpec, Law, W2Method};
use crate::particle::{simulate_with_companion, SimConfig};
use crate::rng;

/// Default threshold on successive 𝕎₂ increments of a long run.
pub const LONG_RUN_TOL: f64 = 1e-4;

/// `(e^{−at} − e^{−ct}) / (c − a)`, equal to `t e^{−ct}` when `a = c` and
/// continuous across that point.
pub fn transfer_factor(a: f64, c: f64, t: f64) -> f64 {
    let gap = c - a;
    if gap == 0.0 {
        t * (-c * t).exp()
    } else {
        -(-a * t).exp() * (-gap * t).exp_m1() / gap
    }
}

/// Upper bound on `𝕎₂(μₜ, μ∞)² + 𝕎₂(νₜ, ν∞)²` given the squared initial
/// distances `w2_zeta_sq = 𝕎₂(ζ, μ∞)²` and `w2_theta_sq = 𝕎₂(θ, ν∞)²`.
pub fn envelope(c: &MonotonicityConstants, w2_zeta_sq: f64, w2_theta_sq: f64, t: f64) -> f64 {
    let rate = c.lambda - c.kappa;
    w2_zeta_sq * ((-rate * t).exp() + c.kappa_bar * transfer_factor(rate, c.lambda_bar, t))
        + w2_theta_sq * (-c.lambda_bar * t).exp()
}

/// An invariant law, analytic or computed.
#[derive(Clone, Debug)]
pub enum InvariantLaw {
    Gaussian { mean: f64, variance: f64 },
    Grid(GridDensity1D),
    Cloud(EmpiricalMeasure),
}

impl InvariantLaw {
    /// 𝕎₂ from `law`; Gaussian references use the analytic quantile function.
    pub fn w2_from(&self, law: Law<'_>) -> Result<f64> {
        Ok(match (self, law) {
            (InvariantLaw::Gaussian { mean, variance }, Law::Grid(g)) => w2_grid_to_gaussian(g, *mean, *variance),
            (InvariantLaw::Gaussian { mean, variance }, Law::Cloud(c)) => w2_cloud_to_gaussian(c, *mean, *variance),
            (InvariantLaw::Grid(r), Law::Grid(g)) => wasserstein2_grids(g, r),
            (InvariantLaw::Grid(r), Law::Cloud(c)) => wasserstein2_cloud_grid(c, r),
            (InvariantLaw::Cloud(r), Law::Cloud(c)) => wasserstein2(c, r, W2Method::Exact1d)?,
            (InvariantLaw::Cloud(r), Law::Grid(g)) => wasserstein2_cloud_grid(r, g),
        })
    }

    pub fn w2_to(&self, other: &InvariantLaw) -> Result<f64> {
        match other {
            InvariantLaw::Grid(g) => self.w2_from(Law::Grid(g)),
            InvariantLaw::Cloud(c) => self.w2_from(Law::Cloud(c)),
            InvariantLaw::Gaussian { mean, variance } => match self {
                InvariantLaw::Gaussian { mean: m, variance: v } => {
                    Ok(crate::measure::gaussian::w2_gaussians(*m, *v, *mean, *variance))
                }
                _ => other.w2_to(self),
            },
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            InvariantLaw::Gaussian { mean, .. } => *mean,
            InvariantLaw::Grid(g) => g.mean(),
            InvariantLaw::Cloud(c) => c.moments().mean[0],
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            InvariantLaw::Gaussian { mean, variance } => variance + mean * mean,
            InvariantLaw::Grid(g) => g.integrate(|x| x * x),
            InvariantLaw::Cloud(c) => c.moments().second_moment,
        }
    }

    /// `∫ h dμ∞`; Gaussians are integrated on a fine grid spanning ±12 sd.
    pub fn integrate(&self, h: &TestFn) -> Result<f64> {
        Ok(match self {
            InvariantLaw::Gaussian { mean, variance } => {
                let sd = variance.sqrt();
                let grid = GridSpec::covering(mean - 12.0 * sd, mean + 12.0 * sd, sd / 200.0)?;
                GridDensity1D::gaussian(grid, *mean, *variance)?.integrate(|x| h.eval(&[x]))
            }
            InvariantLaw::Grid(g) => g.integrate(|x| h.eval(&[x])),
            InvariantLaw::Cloud(c) => c.integrate(|x| h.eval(x)),
        })
    }

    /// Cell-averaged projection on `grid`.
    pub fn on_grid(&self, grid: GridSpec) -> Result<GridDensity1D> {
        match self {
            InvariantLaw::Gaussian { mean, variance } => GridDensity1D::gaussian(grid, *mean, *variance),
            InvariantLaw::Grid(g) if g.grid().same_as(&grid) => Ok(g.clone()),
            _ => Err(Error::InvalidArgument("only Gaussian or same-grid invariant laws can be projected".into())),
        }
    }
}

/// Numerical backend for long runs and decay studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Fpe { solver: SolverConfig, grid: GridSpec },
    Particle { sim: SimConfig },
}

impl Backend {
    /// 𝕎₂ resolution of one measured distance: the cell width on a grid,
    /// `N^{-1/2}` times the root second moment of the reference for particles.
    fn resolution(&self, reference_m2: f64) -> f64 {
        match self {
            Backend::Fpe { grid, .. } => grid.dx,
            Backend::Particle { sim } => reference_m2.max(0.0).sqrt() / (sim.n_particles as f64).sqrt(),
        }
    }

    /// Distances below this are not used for rate fitting.
    fn noise_floor(&self) -> f64 {
        match self {
            Backend::Fpe { grid, .. } => 2.0 * grid.dx,
            Backend::Particle { sim } => 2.0 / (sim.n_particles as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRunConfig {
    pub backend: Backend,
    /// Time between successive increments.
    pub window: f64,
    pub max_horizon: f64,
    /// Increment threshold; particles add `2·N^{-1/2}` to it.
    #[serde(default = "default_long_run_tol")]
    pub tolerance: f64,
    /// Particles only: extra windows run after convergence whose end clouds
    /// are pooled into the returned invariant laws.
    #[serde(default = "default_pool_windows")]
    pub pool_windows: usize,
}

fn default_long_run_tol() -> f64 {
    LONG_RUN_TOL
}

fn default_pool_windows() -> usize {
    4
}

impl LongRunConfig {
    pub fn new(backend: Backend, window: f64, max_horizon: f64) -> Self {
        Self { backend, window, max_horizon, tolerance: LONG_RUN_TOL, pool_windows: default_pool_windows() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum InvariantMethod {
    /// Evolve both components from N(0, 1) until successive 𝕎₂ increments
    /// fall below the tolerance.
    LongRun(LongRunConfig),
    /// Closed-form stationary Gaussian; mean-field OU only.
    MomentFixedPoint,
}

#[derive(Clone, Debug)]
pub struct Invariant {
    pub mu: InvariantLaw,
    pub nu: InvariantLaw,
    /// Time the long run needed (zero for closed forms).
    pub horizon: f64,
    pub last_increment: f64,
}

/// Invariant laws `(μ∞, ν∞)` of the nonlinear equation and of the
/// companion dynamics frozen at μ∞.
pub fn find_invariant(coeffs: &CoefficientSet, constants: &MonotonicityConstants, method: &InvariantMethod) -> Result<Invariant> {
    constants.check_ergodic()?;
    if !coeffs.is_time_homogeneous() {
        return Err(Error::InvalidArgument("invariant laws need time-homogeneous coefficients".into()));
    }
    match method {
        InvariantMethod::MomentFixedPoint => match coeffs.family() {
            Family::MeanFieldOu(p) => {
                if coeffs.dim() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, got: coeffs.dim() });
                }
                let law = InvariantLaw::Gaussian { mean: 0.0, variance: p.stationary_variance() };
                Ok(Invariant { mu: law.clone(), nu: law, horizon: 0.0, last_increment: 0.0 })
            }
            _ => Err(Error::InvalidArgument("the moment fixed point is only available for mean-field OU".into())),
        },
        InvariantMethod::LongRun(cfg) => long_run(coeffs, cfg),
    }
}

fn long_run(coeffs: &CoefficientSet, cfg: &LongRunConfig) -> Result<Invariant> {
    if !(cfg.window > 0.0 && cfg.max_horizon >= cfg.window) {
        return Err(Error::InvalidArgument(format!("window {} and horizon {} are inconsistent", cfg.window, cfg.max_horizon)));
    }
    let windows = (cfg.max_horizon / cfg.window).floor() as usize;
    match &cfg.backend {
        Backend::Fpe { solver, grid } => {
            let solver = solver.clone().recording(Record::EveryStep);
            let mut mu = GridDensity1D::gaussian(*grid, 0.0, 1.0)?;
            let mut nu = mu.clone();
            let mut increment = f64::INFINITY;
            for w in 0..windows {
                let (s, t) = (w as f64 * cfg.window, (w + 1) as f64 * cfg.window);
                let flow = solve_nonlinear_fpe(&mu, coeffs, s, t, &solver)?;
                let nu_path = solve_frozen_fpe(&nu, &flow, coeffs, &solver)?;
                let (mu1, nu1) = (flow.last().clone(), nu_path.last().clone());
                increment = wasserstein2_grids(&mu, &mu1).max(wasserstein2_grids(&nu, &nu1));
                mu = mu1;
                nu = nu1;
                if increment < cfg.tolerance {
                    return Ok(Invariant { mu: InvariantLaw::Grid(mu), nu: InvariantLaw::Grid(nu), horizon: t, last_increment: increment });
                }
            }
            Err(Error::InvariantNonConvergence { horizon: cfg.max_horizon, increment })
        }
        Backend::Particle { sim } => {
            let n = sim.n_particles;
            let tol = cfg.tolerance + 2.0 / (n as f64).sqrt();
            let mut r = rng::stream(rng::derive_seed(sim.seed, 0x1a_u64), 0);
            let start = EmpiricalMeasure::uniform(1, (0..n).map(|_| rng::normal(&mut r)).collect())?;
            let mut mu = start.clone();
            let mut nu = start;
            let mut increment = f64::INFINITY;
            for w in 0..windows {
                let (s, t) = (w as f64 * cfg.window, (w + 1) as f64 * cfg.window);
                let window_cfg = SimConfig { seed: rng::derive_seed(sim.seed, w as u64 + 1), record: Record::At(vec![]), ..sim.clone() };
                let (mu_ens, nu_ens) = simulate_with_companion(&mu, &nu, coeffs, s, t, &window_cfg)?;
                let k = mu_ens.times().len() - 1;
                let (mu1, nu1) = (mu_ens.marginal_at(k), nu_ens.marginal_at(k));
                increment = wasserstein2(&mu, &mu1, W2Method::Exact1d)?.max(wasserstein2(&nu, &nu1, W2Method::Exact1d)?);
                mu = mu1;
                nu = nu1;
                if increment < tol {
                    let (mut mu_pool, mut nu_pool) = (mu.points().to_vec(), nu.points().to_vec());
                    let mut end = t;
                    for p in 0..cfg.pool_windows {
                        let (s, t) = (end, end + cfg.window);
                        let window_cfg =
                            SimConfig { seed: rng::derive_seed(sim.seed, (windows + p) as u64 + 1), record: Record::At(vec![]), ..sim.clone() };
                        let (mu_ens, nu_ens) = simulate_with_companion(&mu, &nu, coeffs, s, t, &window_cfg)?;
                        let k = mu_ens.times().len() - 1;
                        mu = mu_ens.marginal_at(k);
                        nu = nu_ens.marginal_at(k);
                        mu_pool.extend_from_slice(mu.points());
                        nu_pool.extend_from_slice(nu.points());
                        end = t;
                    }
                    return Ok(Invariant {
                        mu: InvariantLaw::Cloud(EmpiricalMeasure::uniform(1, mu_pool)?),
                        nu: InvariantLaw::Cloud(EmpiricalMeasure::uniform(1, nu_pool)?),
                        horizon: end,
                        last_increment: increment,
                    });
                }
            }
            Err(Error::InvariantNonConvergence { horizon: cfg.max_horizon, increment })
        }
    }
}

/// Initial laws of a decay study. Grid densities are sampled for the
/// particle backend; the grid backend needs grid densities.
#[derive(Clone, Copy, Debug)]
pub struct DecayStart<'a> {
    pub zeta: Law<'a>,
    pub theta: Law<'a>,
}

#[derive(Clone, Debug)]
pub struct DecayConfig {
    pub horizon: f64,
    pub n_checkpoints: usize,
    pub backend: Backend,
    /// Test functions whose gaps `|μₜ(h) − μ∞(h)|` are reported.
    pub test_functions: Vec<TestFn>,
    pub execution: Execution,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErgodicityReport {
    pub times: Vec<f64>,
    pub w2_mu: Vec<f64>,
    pub w2_nu: Vec<f64>,
    pub bound: Vec<f64>,
    /// One standard error of `𝕎₂(μₜ,μ∞)² + 𝕎₂(νₜ,ν∞)²` at each checkpoint.
    pub stat_err: Vec<f64>,
    /// Least-squares decay rate of `𝕎₂(μₜ,μ∞)²` over `[horizon/2, horizon]`;
    /// `None` when fewer than two points clear the noise floor.
    pub fitted_rate: Option<f64>,
    pub fit_points: usize,
    pub noise_floor: f64,
    pub constants: MonotonicityConstants,
    pub w2_zeta: f64,
    pub w2_theta: f64,
    /// Labels and `|μₜ(h) − μ∞(h)|` series of the requested test functions.
    pub test_gaps: Vec<(String, Vec<f64>)>,
    /// Checkpoint times where the measured sum exceeds `bound + 3·stat_err`.
    pub violations: Vec<f64>,
}

impl ErgodicityReport {
    pub fn envelope_holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// Sum of squared distances at each checkpoint.
    pub fn measured(&self) -> Vec<f64> {
        self.w2_mu.iter().zip(&self.w2_nu).map(|(a, b)| a * a + b * b).collect()
    }

    /// Columns `t, w2_mu, w2_nu, envelope`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,w2_mu,w2_nu,envelope")?;
        for k in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.times[k]),
                fmt_f64(self.w2_mu[k]),
                fmt_f64(self.w2_nu[k]),
                fmt_f64(self.bound[k])
            )?;
        }
        Ok(())
    }
}

/// Least-squares slope of `ln y` against `t`, negated.
pub fn fit_decay_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    if t.len() < 2 {
        return None;
    }
    let n = t.len() as f64;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let tm = t.iter().sum::<f64>() / n;
    let lm = ly.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    let sxy: f64 = t.iter().zip(&ly).map(|(a, b)| (a - tm) * (b - lm)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

fn checkpoints(horizon: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![horizon];
    }
    (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect()
}

enum Trajectory {
    Grid(Vec<GridDensity1D>, Vec<GridDensity1D>),
    Cloud(Vec<EmpiricalMeasure>, Vec<EmpiricalMeasure>),
}

impl Trajectory {
    fn mu(&self, k: usize) -> Law<'_> {
        match self {
            Trajectory::Grid(m, _) => Law::Grid(&m[k]),
            Trajectory::Cloud(m, _) => Law::Cloud(&m[k]),
        }
    }

    fn nu(&self, k: usize) -> Law<'_> {
        match self {
            Trajectory::Grid(_, n) => Law::Grid(&n[k]),
            Trajectory::Cloud(_, n) => Law::Cloud(&n[k]),
        }
    }
}

fn grid_start(law: Law<'_>) -> Result<GridDensity1D> {
    match law {
        Law::Grid(g) => Ok(g.clone()),
        Law::Cloud(_) => Err(Error::InvalidArgument("the grid backend needs grid initial laws".into())),
    }
}

fn cloud_start(law: Law<'_>, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    match law {
        Law::Cloud(c) => Ok(c.clone()),
        Law::Grid(g) => g.sample(n, &mut rng::stream(seed, 0)),
    }
}

/// Solves both components from `(ζ, θ)` over `[0, horizon]`, measures the
/// distances to `(μ∞, ν∞)` at evenly spaced checkpoints and evaluates the
/// envelope with `constants`.
pub fn decay_study(
    start: DecayStart<'_>,
    coeffs: &CoefficientSet,
    constants: &MonotonicityConstants,
    invariant: &Invariant,
    cfg: &DecayConfig,
) -> Result<ErgodicityReport> {
    constants.check_ergodic()?;
    if !(cfg.horizon > 0.0) || cfg.n_checkpoints == 0 {
        return Err(Error::InvalidArgument("decay study needs a positive horizon and at least one checkpoint".into()));
    }
    let times = checkpoints(cfg.horizon, cfg.n_checkpoints);
    let trajectory = match &cfg.backend {
        Backend::Fpe { solver, grid } => {
            let zeta = grid_start(start.zeta)?;
            let theta = grid_start(start.theta)?;
            if !zeta.grid().same_as(grid) || !theta.grid().same_as(grid) {
                return Err(Error::GridMismatch("initial laws must live on the backend grid".into()));
            }
            // the frozen solve reads the flow between stored states, so
            // store it on a mesh of ~1000 intervals besides the checkpoints
            let mesh = (cfg.horizon / solver.dt).round().clamp(1.0, 1000.0) as usize;
            let mut stored: Vec<f64> = (1..mesh).map(|k| cfg.horizon * k as f64 / mesh as f64).collect();
            stored.extend(times.iter().copied().filter(|&t| t > 0.0 && t < cfg.horizon));
            stored.sort_by(f64::total_cmp);
            let flow_cfg = solver.clone().recording(Record::At(stored));
            let flow = solve_nonlinear_fpe(&zeta, coeffs, 0.0, cfg.horizon, &flow_cfg)?;
            let nu_path = solve_frozen_fpe(&theta, &flow, coeffs, &solver.clone().recording(Record::At(times.clone())))?;
            let pick = |p: &DensityPath| -> Vec<GridDensity1D> {
                times.iter().map(|&t| p.states()[p.nearest_index(t)].clone()).collect()
            };
            Trajectory::Grid(pick(&flow), pick(&nu_path))
        }
        Backend::Particle { sim } => {
            let n = sim.n_particles;
            let zeta = cloud_start(start.zeta, n, rng::derive_seed(sim.seed, 0x2e7a))?;
            let theta = cloud_start(start.theta, n, rng::derive_seed(sim.seed, 0x7e7a))?;
            let sim = sim.clone().recording(Record::At(times.clone()));
            let (mu, nu) = simulate_with_companion(&zeta, &theta, coeffs, 0.0, cfg.horizon, &sim)?;
            let pick = |e: &crate::particle::PathEnsemble| -> Vec<EmpiricalMeasure> {
                times.iter().map(|&t| e.marginal_at(e.nearest_index(t))).collect()
            };
            Trajectory::Cloud(pick(&mu), pick(&nu))
        }
    };
    let w2_zeta = invariant.mu.w2_from(start.zeta)?;
    let w2_theta = invariant.nu.w2_from(start.theta)?;
    let distances: Vec<(f64, f64)> = map_indexed(cfg.execution, times.len(), |k| {
        let a = invariant.mu.w2_from(trajectory.mu(k));
        let b = invariant.nu.w2_from(trajectory.nu(k));
        (a.unwrap_or(f64::NAN), b.unwrap_or(f64::NAN))
    });
    let (w2_mu, w2_nu): (Vec<f64>, Vec<f64>) = distances.into_iter().unzip();
    let e_mu = cfg.backend.resolution(invariant.mu.second_moment());
    let e_nu = cfg.backend.resolution(invariant.nu.second_moment());
    let stat_err: Vec<f64> = w2_mu
        .iter()
        .zip(&w2_nu)
        .map(|(a, b)| 2.0 * a * e_mu + e_mu * e_mu + 2.0 * b * e_nu + e_nu * e_nu)
        .collect();
    let bound: Vec<f64> = times.iter().map(|&t| envelope(constants, w2_zeta * w2_zeta, w2_theta * w2_theta, t)).collect();
    let floor = cfg.backend.noise_floor();
    let (fit_t, fit_y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&w2_mu)
        .filter(|(t, w)| **t >= 0.5 * cfg.horizon && **w > floor)
        .map(|(t, w)| (*t, w * w))
        .unzip();
    let fitted_rate = fit_decay_rate(&fit_t, &fit_y);
    let mut test_gaps = Vec::new();
    for h in &cfg.test_functions {
        let reference = invariant.mu.integrate(h)?;
        let gaps = (0..times.len()).map(|k| (trajectory.mu(k).integrate(|x| h.eval(x)) - reference).abs()).collect();
        test_gaps.push((h.label().to_string(), gaps));
    }
    let mut report = ErgodicityReport {
        times,
        w2_mu,
        w2_nu,
        bound,
        stat_err,
        fitted_rate,
        fit_points: fit_t.len(),
        noise_floor: floor,
        constants: *constants,
        w2_zeta,
        w2_theta,
        test_gaps,
        violations: Vec::new(),
    };
    let measured = report.measured();
    report.violations = (0..report.times.len())
        .filter(|&k| !(measured[k] <= report.bound[k] + 3.0 * report.stat_err[k]))
        .map(|k| report.times[k])
        .collect();
    Ok(report)
}

/// 𝕎₂ moved by one flow step of length `delta` started at `(μ∞, ν∞)`.
pub fn invariance_defect(coeffs: &CoefficientSet, invariant: &Invariant, delta: f64, backend: &Backend) -> Result<(f64, f64)> {
    match backend {
        Backend::Fpe { solver, grid } => {
            let mu = invariant.mu.on_grid(*grid)?;
            let nu = invariant.nu.on_grid(*grid)?;
            let solver = solver.clone().recording(Record::EveryStep);
            let flow = solve_nonlinear_fpe(&mu, coeffs, 0.0, delta, &solver)?;
            let nu1 = solve_frozen_fpe(&nu, &flow, coeffs, &solver)?;
            Ok((invariant.mu.w2_from(Law::Grid(flow.last()))?, invariant.nu.w2_from(Law::Grid(nu1.last()))?))
        }
        Backend::Particle { sim } => {
            let n = sim.n_particles;
            let draw = |law: &InvariantLaw, tag: u64| -> Result<EmpiricalMeasure> {
                let mut r = rng::stream(rng::derive_seed(sim.seed, tag), 0);
                match law {
                    InvariantLaw::Cloud(c) => Ok(c.clone()),
                    InvariantLaw::Grid(g) => g.sample(n, &mut r),
                    InvariantLaw::Gaussian { mean, variance } => {
                        let sd = variance.sqrt();
                        EmpiricalMeasure::uniform(1, (0..n).map(|_| mean + sd * rng::normal(&mut r)).collect())
                    }
                }
            };
            let mu0 = draw(&invariant.mu, 0x3a)?;
            let nu0 = draw(&invariant.nu, 0x3b)?;
            let sim = sim.clone().recording(Record::At(vec![]));
            let (mu, nu) = simulate_with_companion(&mu0, &nu0, coeffs, 0.0, delta, &sim)?;
            let (m1, n1) = (mu.marginal_at(mu.times().len() - 1), nu.marginal_at(nu.times().len() - 1));
            Ok((
                wasserstein2(&mu0, &m1, W2Method::Exact1d)?,
                wasserstein2(&nu0, &n1, W2Method::Exact1d)?,
            ))
        }
    }
}
