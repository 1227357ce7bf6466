//! Conservative finite-volume solver for one-dimensional nonlinear
//! Fokker–Planck equations `∂ₜu = ½∂ₓₓ(a u) − ∂ₓ(b u)` whose coefficients
//! may depend on the solution itself, and for the linear equation obtained by
//! freezing the measure argument along a stored flow.

use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, MeasureView, Side};
use crate::cylindrical::TestFn;
use crate::error::{Error, Result};
use crate::measure::io::fmt_f64;
use crate::measure::{GridDensity1D, GridSpec};

/// Cumulative clipped mass beyond which a run is aborted.
pub const CLIPPED_MASS_LIMIT: f64 = 1e-6;
pub const NEWTON_MAX_ITERATIONS: usize = 20;
pub const NEWTON_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    #[default]
    SemiImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    NoFlux,
}

/// Which states end up in the returned path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    #[default]
    EveryStep,
    /// Every k-th step, plus the final time.
    Stride(usize),
    /// Exactly these times (steps are aligned to land on them), plus start and end.
    At(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub record: Record,
}

fn default_cfl() -> f64 {
    0.9
}

impl SolverConfig {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        Self { dt, scheme, cfl_safety: default_cfl(), boundary: Boundary::NoFlux, record: Record::EveryStep }
    }

    pub fn recording(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("cfl_safety = {} must lie in (0, 1]", self.cfl_safety)));
        }
        if let Record::Stride(0) = self.record {
            return Err(Error::InvalidArgument("record stride must be positive".into()));
        }
        Ok(())
    }
}

/// Per-run conservation and positivity diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConservationLog {
    pub steps: usize,
    pub max_step_mass_error: f64,
    pub min_value_before_clip: f64,
    pub clipped_mass: f64,
    pub clip_events: usize,
    pub max_newton_iterations: usize,
    pub max_newton_residual: f64,
}

/// Time series of grid densities on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityPath {
    times: Vec<f64>,
    states: Vec<GridDensity1D>,
    dt: f64,
    scheme: Scheme,
    log: ConservationLog,
}

#[derive(Serialize)]
struct PathManifest<'a> {
    grid: &'a GridSpec,
    dt: f64,
    scheme: Scheme,
    times: &'a [f64],
    conservation: &'a ConservationLog,
}

impl DensityPath {
    pub fn new(times: Vec<f64>, states: Vec<GridDensity1D>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::InvalidArgument(format!("{} times for {} states", times.len(), states.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path times must be strictly increasing".into()));
        }
        let g = *states[0].grid();
        if states.iter().any(|s| !s.grid().same_as(&g)) {
            return Err(Error::GridMismatch("path states must share one grid".into()));
        }
        Ok(Self { times, states, dt: 0.0, scheme: Scheme::default(), log: ConservationLog::default() })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[GridDensity1D] {
        &self.states
    }

    pub fn grid(&self) -> &GridSpec {
        self.states[0].grid()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> &GridDensity1D {
        &self.states[0]
    }

    pub fn last(&self) -> &GridDensity1D {
        &self.states[self.states.len() - 1]
    }

    pub fn log(&self) -> &ConservationLog {
        &self.log
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn tol(&self) -> f64 {
        1e-9 * (1.0 + self.start().abs().max(self.end().abs()))
    }

    /// Index of a stored time equal to `t` up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.nearest_index(t);
        ((self.times[k] - t).abs() <= self.tol()).then_some(k)
    }

    pub fn nearest_index(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            0
        } else if k == self.times.len() || (t - self.times[k - 1]) <= (self.times[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// State at `t`, linearly interpolated in time between stored states.
    pub fn state_at(&self, t: f64) -> Result<GridDensity1D> {
        if t < self.start() - self.tol() || t > self.end() + self.tol() {
            return Err(Error::OutsideHorizon { t, start: self.start(), end: self.end() });
        }
        if let Some(k) = self.index_of(t) {
            return Ok(self.states[k].clone());
        }
        let k = self.times.partition_point(|&s| s < t);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        GridDensity1D::interpolate(&self.states[k - 1], &self.states[k], (t - t0) / (t1 - t0))
    }

    /// Sub-path on `[s, t]` (both must be stored times).
    pub fn slice(&self, s: f64, t: f64) -> Result<DensityPath> {
        let (a, b) = match (self.index_of(s), self.index_of(t)) {
            (Some(a), Some(b)) if a <= b => (a, b),
            _ => {
                return Err(Error::FlowCoverage { start: s, end: t, available_start: self.start(), available_end: self.end() })
            }
        };
        Ok(DensityPath {
            times: self.times[a..=b].to_vec(),
            states: self.states[a..=b].to_vec(),
            dt: self.dt,
            scheme: self.scheme,
            log: self.log.clone(),
        })
    }

    /// CSV with columns `t,x,u`, one row per (time, cell).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,u")?;
        let g = self.grid();
        for (t, s) in self.times.iter().zip(&self.states) {
            for (i, u) in s.values().iter().enumerate() {
                writeln!(out, "{},{},{}", fmt_f64(*t), fmt_f64(g.center(i)), fmt_f64(*u))?;
            }
        }
        Ok(())
    }

    pub fn manifest_json(&self) -> Result<String> {
        let m = PathManifest { grid: self.grid(), dt: self.dt, scheme: self.scheme, times: &self.times, conservation: &self.log };
        Ok(serde_json::to_string_pretty(&m)?)
    }
}

/// Step nodes from `s` to `t_end` through every breakpoint, with spacing at
/// most `dt` between consecutive breakpoints. Returns node times and, for
/// each node, whether it is a breakpoint.
pub(crate) fn schedule(s: f64, t_end: f64, breakpoints: &[f64], dt: f64) -> Vec<(f64, bool)> {
    let tol = 1e-12 * (1.0 + s.abs().max(t_end.abs()));
    let mut bps: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > s + tol && b < t_end - tol).collect();
    bps.push(t_end);
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let mut nodes = vec![(s, true)];
    let mut a = s;
    for &b in &bps {
        let n = (((b - a) / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 1..n {
            nodes.push((a + k as f64 * h, false));
        }
        nodes.push((b, true));
        a = b;
    }
    nodes
}

fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// `−∂ₓ(v u)` with limited second-order upwind face values and no-flux ends.
fn transport_rhs(u: &[f64], v: &[f64], dx: f64, out: &mut [f64]) {
    let n = u.len();
    let slope = |i: usize| if i == 0 || i + 1 >= n { 0.0 } else { minmod(u[i] - u[i - 1], u[i + 1] - u[i]) };
    let mut prev_flux = 0.0;
    let mut s_i = slope(0);
    for i in 0..n {
        let flux = if i + 1 < n {
            let s_next = slope(i + 1);
            let vf = 0.5 * (v[i] + v[i + 1]);
            let f = if vf >= 0.0 { vf * (u[i] + 0.5 * s_i) } else { vf * (u[i + 1] - 0.5 * s_next) };
            s_i = s_next;
            f
        } else {
            0.0
        };
        out[i] = -(flux - prev_flux) / dx;
        prev_flux = flux;
    }
}

/// `(L p)ᵢ` for the no-flux discrete Laplacian.
fn laplacian(p: &[f64], dx: f64, out: &mut [f64]) {
    let n = p.len();
    let inv = 1.0 / (dx * dx);
    for i in 0..n {
        let left = if i > 0 { p[i - 1] - p[i] } else { 0.0 };
        let right = if i + 1 < n { p[i + 1] - p[i] } else { 0.0 };
        out[i] = (left + right) * inv;
    }
}

/// Solves `(I − c·L·diag(w)) x = rhs` for nonnegative weights `w`, a
/// tridiagonal system with unit column sums (so Σx = Σrhs).
fn solve_diffusion_system(w: &[f64], c: f64, dx: f64, rhs: &[f64]) -> Vec<f64> {
    let n = w.len();
    let k = c / (dx * dx);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let neighbours = (i > 0) as u8 as f64 + (i + 1 < n) as u8 as f64;
        diag[i] = 1.0 + k * neighbours * w[i];
        if i > 0 {
            lower[i] = -k * w[i - 1];
        }
        if i + 1 < n {
            upper[i] = -k * w[i + 1];
        }
    }
    thomas(&lower, &diag, &upper, rhs)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn mass(u: &[f64], dx: f64) -> f64 {
    dx * u.iter().sum::<f64>()
}

fn wrap_eval(i: usize, t: f64, e: Error) -> Error {
    match e {
        Error::MissingDensityView | Error::CoefficientEvaluation { .. } => e,
        other => Error::CoefficientEvaluation { index: i, time: t, reason: other.to_string() },
    }
}

/// Coefficients sampled at the cell centers.
struct CellCoefficients {
    drift: Vec<f64>,
    diffusivity: Vec<f64>,
}

fn sample_drift(coeffs: &CoefficientSet, side: Side, t: f64, grid: &GridSpec, view: &MeasureView<'_>) -> Result<Vec<f64>> {
    let mut out = [0.0];
    (0..grid.n)
        .map(|i| {
            coeffs.drift_into(side, t, &[grid.center(i)], view, &mut out).map_err(|e| wrap_eval(i, t, e))?;
            Ok(out[0])
        })
        .collect()
}

fn sample_diffusivity(coeffs: &CoefficientSet, side: Side, t: f64, grid: &GridSpec, view: &MeasureView<'_>) -> Result<Vec<f64>> {
    (0..grid.n)
        .map(|i| coeffs.diffusivity_1d(side, t, grid.center(i), view).map_err(|e| wrap_eval(i, t, e)))
        .collect()
}

fn sample(coeffs: &CoefficientSet, side: Side, t: f64, grid: &GridSpec, view: &MeasureView<'_>) -> Result<CellCoefficients> {
    Ok(CellCoefficients { drift: sample_drift(coeffs, side, t, grid, view)?, diffusivity: sample_diffusivity(coeffs, side, t, grid, view)? })
}

struct Stepper<'c> {
    grid: GridSpec,
    coeffs: &'c CoefficientSet,
    cfg: &'c SolverConfig,
    log: ConservationLog,
}

impl<'c> Stepper<'c> {
    fn new(grid: GridSpec, coeffs: &'c CoefficientSet, cfg: &'c SolverConfig) -> Self {
        let log = ConservationLog { min_value_before_clip: f64::INFINITY, ..Default::default() };
        Self { grid, coeffs, cfg, log }
    }

    fn check_cfl(&self, h: f64, a_max: f64, v_max: f64) -> Result<()> {
        let dx = self.grid.dx;
        let rate = a_max / (dx * dx) + 2.0 * v_max / dx;
        if h * rate > self.cfg.cfl_safety {
            return Err(Error::CflViolation { dt: h, bound: self.cfg.cfl_safety / rate });
        }
        Ok(())
    }

    /// Explicit transport stage shared by both schemes.
    fn transported(&self, u: &[f64], drift: &[f64], h: f64) -> Vec<f64> {
        let mut rhs = vec![0.0; u.len()];
        transport_rhs(u, drift, self.grid.dx, &mut rhs);
        u.iter().zip(&rhs).map(|(a, r)| a + h * r).collect()
    }

    /// Transport over `h`, sub-cycled so each substep meets the CFL bound.
    fn transported_subcycled(&self, u: &[f64], drift: &[f64], h: f64, v_max: f64) -> Vec<f64> {
        let rate = 2.0 * v_max / self.grid.dx;
        let k = ((h * rate / self.cfg.cfl_safety) - 1e-12).ceil().max(1.0) as usize;
        let sub = h / k as f64;
        let mut state = self.transported(u, drift, sub);
        for _ in 1..k {
            state = self.transported(&state, drift, sub);
        }
        state
    }

    /// Nonlinear step: drift from `u` at `t0`, diffusion implicit at `t1`.
    fn step_nonlinear(&mut self, u: &[f64], t0: f64, t1: f64) -> Result<Vec<f64>> {
        let h = t1 - t0;
        let dx = self.grid.dx;
        let current = GridDensity1D::from_parts_unchecked(self.grid, u.to_vec());
        let view = MeasureView::of_grid(&current);
        let drift = sample_drift(self.coeffs, Side::Nonlinear, t0, &self.grid, &view)?;
        let v_max = drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let next = match self.cfg.scheme {
            Scheme::Explicit => {
                let p = self.pressure(u, t0, &view)?;
                let a_max = u.iter().zip(&p).map(|(u, p)| if *u > 0.0 { p / u } else { 0.0 }).fold(0.0f64, f64::max);
                let a_max = a_max.max(self.max_diffusivity_at_zero(t0)?);
                self.check_cfl(h, a_max, v_max)?;
                let mut next = self.transported(u, &drift, h);
                let mut lap = vec![0.0; u.len()];
                laplacian(&p, dx, &mut lap);
                next.iter_mut().zip(&lap).for_each(|(n, l)| *n += 0.5 * h * l);
                next
            }
            Scheme::SemiImplicit => {
                let star = self.transported_subcycled(u, &drift, h, v_max);
                if self.coeffs.pressure().is_some() {
                    self.newton(&star, t1, h)?
                } else {
                    self.picard(&star, u, t1, h)?
                }
            }
        };
        self.finish_step(u, next)
    }

    fn max_diffusivity_at_zero(&self, t: f64) -> Result<f64> {
        Ok(match self.coeffs.pressure() {
            Some(p) => (0..self.grid.n).map(|i| p(t, self.grid.center(i), 0.0).1).fold(0.0, f64::max),
            None => 0.0,
        })
    }

    fn pressure(&self, u: &[f64], t: f64, view: &MeasureView<'_>) -> Result<Vec<f64>> {
        match self.coeffs.pressure() {
            Some(p) => Ok(u.iter().enumerate().map(|(i, &ui)| p(t, self.grid.center(i), ui).0).collect()),
            None => {
                let a = sample_diffusivity(self.coeffs, Side::Nonlinear, t, &self.grid, view)?;
                Ok(a.iter().zip(u).map(|(a, u)| a * u).collect())
            }
        }
    }

    /// Newton iteration for `w − ½h·L p(w) = rhs`.
    fn newton(&mut self, rhs: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
        let p = self.coeffs.pressure().expect("pressure form");
        let dx = self.grid.dx;
        let n = rhs.len();
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut w = rhs.to_vec();
        let mut lap = vec![0.0; n];
        let mut residual = f64::INFINITY;
        for it in 0..=NEWTON_MAX_ITERATIONS {
            let (pw, dp): (Vec<f64>, Vec<f64>) = w.iter().enumerate().map(|(i, &wi)| p(t, self.grid.center(i), wi)).unzip();
            laplacian(&pw, dx, &mut lap);
            let g: Vec<f64> = (0..n).map(|i| w[i] - 0.5 * h * lap[i] - rhs[i]).collect();
            residual = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale;
            if residual <= NEWTON_TOL {
                self.log.max_newton_iterations = self.log.max_newton_iterations.max(it);
                self.log.max_newton_residual = self.log.max_newton_residual.max(residual);
                return Ok(w);
            }
            if it == NEWTON_MAX_ITERATIONS {
                break;
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let delta = solve_diffusion_system(&dp, 0.5 * h, dx, &neg_g);
            w.iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
        }
        Err(Error::NewtonNonConvergence { iterations: NEWTON_MAX_ITERATIONS, residual })
    }

    /// Fixed point on the diffusivity for coefficients without a pressure form.
    fn picard(&mut self, rhs: &[f64], u: &[f64], t: f64, h: f64) -> Result<Vec<f64>> {
        let dx = self.grid.dx;
        let mut state = u.to_vec();
        let mut a_prev: Option<Vec<f64>> = None;
        for it in 0..=NEWTON_MAX_ITERATIONS {
            let g = GridDensity1D::from_parts_unchecked(self.grid, state.clone());
            let a = sample_diffusivity(self.coeffs, Side::Nonlinear, t, &self.grid, &MeasureView::of_grid(&g))?;
            if let Some(prev) = &a_prev {
                let change = a.iter().zip(prev).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                if change <= NEWTON_TOL * scale {
                    self.log.max_newton_iterations = self.log.max_newton_iterations.max(it);
                    return Ok(state);
                }
            }
            state = solve_diffusion_system(&a, 0.5 * h, dx, rhs);
            a_prev = Some(a);
        }
        Err(Error::NewtonNonConvergence { iterations: NEWTON_MAX_ITERATIONS, residual: f64::NAN })
    }

    /// Linear step along frozen coefficients.
    fn step_frozen(&mut self, nu: &[f64], t0: f64, t1: f64, at0: &CellCoefficients, at1: &CellCoefficients) -> Result<Vec<f64>> {
        let h = t1 - t0;
        let dx = self.grid.dx;
        let v_max = at0.drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let next = match self.cfg.scheme {
            Scheme::Explicit => {
                let a_max = at0.diffusivity.iter().fold(0.0f64, |m, v| m.max(*v));
                self.check_cfl(h, a_max, v_max)?;
                let mut next = self.transported(nu, &at0.drift, h);
                let p: Vec<f64> = at0.diffusivity.iter().zip(nu).map(|(a, v)| a * v).collect();
                let mut lap = vec![0.0; nu.len()];
                laplacian(&p, dx, &mut lap);
                next.iter_mut().zip(&lap).for_each(|(n, l)| *n += 0.5 * h * l);
                next
            }
            Scheme::SemiImplicit => {
                let star = self.transported_subcycled(nu, &at0.drift, h, v_max);
                solve_diffusion_system(&at1.diffusivity, 0.5 * h, dx, &star)
            }
        };
        self.finish_step(nu, next)
    }

    /// Logs mass error, clips negative values and renormalizes.
    fn finish_step(&mut self, before: &[f64], mut next: Vec<f64>) -> Result<Vec<f64>> {
        let dx = self.grid.dx;
        let m0 = mass(before, dx);
        let m1 = mass(&next, dx);
        self.log.steps += 1;
        self.log.max_step_mass_error = self.log.max_step_mass_error.max((m1 - m0).abs());
        let min = next.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        self.log.min_value_before_clip = self.log.min_value_before_clip.min(min);
        if min < 0.0 {
            let clipped: f64 = next.iter().filter(|v| **v < 0.0).map(|v| -v * dx).sum();
            next.iter_mut().for_each(|v| *v = v.max(0.0));
            let m = mass(&next, dx);
            next.iter_mut().for_each(|v| *v *= m0 / m);
            self.log.clipped_mass += clipped;
            self.log.clip_events += 1;
            debug!("clipped {clipped:e} of negative mass (cumulative {:e})", self.log.clipped_mass);
            if self.log.clipped_mass > CLIPPED_MASS_LIMIT {
                warn!("clipped mass {:e} exceeds {CLIPPED_MASS_LIMIT:e}", self.log.clipped_mass);
                return Err(Error::ClippedMassExceeded { clipped: self.log.clipped_mass, limit: CLIPPED_MASS_LIMIT });
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite density after a step".into()));
        }
        Ok(next)
    }

    fn finish(mut self, times: Vec<f64>, states: Vec<GridDensity1D>) -> DensityPath {
        if self.log.steps == 0 {
            self.log.min_value_before_clip = states[0].values().iter().fold(f64::INFINITY, |m, v| m.min(*v));
        }
        DensityPath { times, states, dt: self.cfg.dt, scheme: self.cfg.scheme, log: self.log }
    }
}

pub(crate) fn requested_times(record: &Record) -> &[f64] {
    match record {
        Record::At(ts) => ts,
        _ => &[],
    }
}

pub(crate) fn keep(record: &Record, step: usize, is_breakpoint: bool, is_last: bool) -> bool {
    is_last
        || match record {
            Record::EveryStep => true,
            Record::Stride(k) => step.is_multiple_of(*k),
            Record::At(_) => is_breakpoint,
        }
}

pub(crate) fn check_horizon(s: f64, t_end: f64) -> Result<()> {
    if !(s.is_finite() && t_end.is_finite() && t_end >= s) {
        return Err(Error::InvalidArgument(format!("invalid horizon [{s}, {t_end}]")));
    }
    Ok(())
}

/// Solves the nonlinear equation from `u0` at time `s` up to `t_end`.
pub fn solve_nonlinear_fpe(u0: &GridDensity1D, coeffs: &CoefficientSet, s: f64, t_end: f64, cfg: &SolverConfig) -> Result<DensityPath> {
    cfg.validate()?;
    check_horizon(s, t_end)?;
    if coeffs.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: coeffs.dim() });
    }
    let grid = *u0.grid();
    let mut stepper = Stepper::new(grid, coeffs, cfg);
    let mut times = vec![s];
    let mut states = vec![u0.clone()];
    if t_end == s {
        return Ok(stepper.finish(times, states));
    }
    let nodes = schedule(s, t_end, requested_times(&cfg.record), cfg.dt);
    let mut u = u0.values().to_vec();
    for k in 1..nodes.len() {
        u = stepper.step_nonlinear(&u, nodes[k - 1].0, nodes[k].0)?;
        if keep(&cfg.record, k, nodes[k].1, k + 1 == nodes.len()) {
            times.push(nodes[k].0);
            states.push(GridDensity1D::from_parts_unchecked(grid, u.clone()));
        }
    }
    Ok(stepper.finish(times, states))
}

/// Solves the linear equation for ν driven by the companion coefficients
/// evaluated along `flow`, over the whole horizon of the flow.
pub fn solve_frozen_fpe(nu0: &GridDensity1D, flow: &DensityPath, coeffs_bar: &CoefficientSet, cfg: &SolverConfig) -> Result<DensityPath> {
    solve_frozen_fpe_on(nu0, flow, coeffs_bar, flow.start(), flow.end(), cfg)
}

/// As [`solve_frozen_fpe`], on `[s, t_end]` inside the flow's horizon.
pub fn solve_frozen_fpe_on(
    nu0: &GridDensity1D,
    flow: &DensityPath,
    coeffs_bar: &CoefficientSet,
    s: f64,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<DensityPath> {
    cfg.validate()?;
    check_horizon(s, t_end)?;
    if coeffs_bar.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: coeffs_bar.dim() });
    }
    let tol = flow.tol();
    if s < flow.start() - tol || t_end > flow.end() + tol {
        return Err(Error::FlowCoverage { start: s, end: t_end, available_start: flow.start(), available_end: flow.end() });
    }
    let grid = *nu0.grid();
    if !grid.same_as(flow.grid()) {
        return Err(Error::GridMismatch("initial law and flow live on different grids".into()));
    }
    let mut stepper = Stepper::new(grid, coeffs_bar, cfg);
    let mut times = vec![s];
    let mut states = vec![nu0.clone()];
    if t_end == s {
        return Ok(stepper.finish(times, states));
    }
    let flow_times: Vec<f64> = flow.times().iter().copied().filter(|&t| t > s && t < t_end).collect();
    let requested = requested_times(&cfg.record);
    let breakpoints: Vec<f64> = flow_times.iter().chain(requested).copied().collect();
    let nodes = schedule(s, t_end, &breakpoints, cfg.dt);
    let is_requested = |t: f64| t == t_end || requested.iter().any(|r| (r - t).abs() <= tol);
    let coefficients_at = |t: f64| -> Result<CellCoefficients> {
        let mu = flow.state_at(t)?;
        sample(coeffs_bar, Side::Companion, t, &grid, &MeasureView::of_grid(&mu))
    };
    let mut nu = nu0.values().to_vec();
    let mut at0 = coefficients_at(s)?;
    for k in 1..nodes.len() {
        let at1 = coefficients_at(nodes[k].0)?;
        nu = stepper.step_frozen(&nu, nodes[k - 1].0, nodes[k].0, &at0, &at1)?;
        let breakpoint = is_requested(nodes[k].0);
        if keep(&cfg.record, k, breakpoint, k + 1 == nodes.len()) {
            times.push(nodes[k].0);
            states.push(GridDensity1D::from_parts_unchecked(grid, nu.clone()));
        }
        at0 = at1;
    }
    Ok(stepper.finish(times, states))
}

/// `∫ (½ a h″ + b h′) dμ` with coefficients at `(t, ·, view)`.
pub(crate) fn generator_integral(
    coeffs: &CoefficientSet,
    side: Side,
    t: f64,
    state: &GridDensity1D,
    view: &MeasureView<'_>,
    h: &TestFn,
) -> Result<f64> {
    let g = state.grid();
    let mut acc = 0.0;
    let mut b = [0.0];
    for (i, &u) in state.values().iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let x = [g.center(i)];
        coeffs.drift_into(side, t, &x, view, &mut b).map_err(|e| wrap_eval(i, t, e))?;
        let a = coeffs.diffusivity_1d(side, t, x[0], view).map_err(|e| wrap_eval(i, t, e))?;
        acc += u * g.dx * (0.5 * a * h.hessian(&x)[0] + b[0] * h.gradient(&x)[0]);
    }
    Ok(acc)
}

fn weak_residual_with<F>(path: &DensityPath, h: &TestFn, mut generator: F) -> Result<Vec<(f64, f64)>>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mu_h: Vec<f64> = path.states().iter().map(|s| s.integrate(|x| h.eval(&[x]))).collect();
    let gens: Vec<f64> = (0..path.len()).map(&mut generator).collect::<Result<_>>()?;
    let times = path.times();
    let mut integral = 0.0;
    let mut out = vec![(times[0], 0.0)];
    for k in 1..path.len() {
        integral += 0.5 * (times[k] - times[k - 1]) * (gens[k] + gens[k - 1]);
        out.push((times[k], mu_h[k] - mu_h[0] - integral));
    }
    Ok(out)
}

/// Weak-form residual `μₜ(h) − μₛ(h) − ∫ₛᵗ μᵣ(L_{r,μᵣ} h) dr` of a path of
/// the nonlinear equation at each stored time (trapezoidal rule in time).
pub fn fpe_weak_residual(path: &DensityPath, coeffs: &CoefficientSet, h: &TestFn) -> Result<Vec<(f64, f64)>> {
    weak_residual_with(path, h, |k| {
        let s = &path.states()[k];
        generator_integral(coeffs, Side::Nonlinear, path.times()[k], s, &MeasureView::of_grid(s), h)
    })
}

/// Weak-form residual of a frozen path: coefficients see the flow, not ν.
pub fn frozen_weak_residual(path: &DensityPath, flow: &DensityPath, coeffs_bar: &CoefficientSet, h: &TestFn) -> Result<Vec<(f64, f64)>> {
    weak_residual_with(path, h, |k| {
        let t = path.times()[k];
        let mu = flow.state_at(t)?;
        generator_integral(coeffs_bar, Side::Companion, t, &path.states()[k], &MeasureView::of_grid(&mu), h)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{nldbm_coefficients, BetaForm, DriftScalarForm, NldbmSpec};
    use std::sync::Arc;

    fn heat_setup(dx: f64) -> (GridDensity1D, CoefficientSet) {
        let g = GridSpec::centered(8.0, dx).unwrap();
        (GridDensity1D::gaussian(g, 0.0, 0.1).unwrap(), CoefficientSet::heat(1))
    }

    fn ou_drift() -> CoefficientSet {
        CoefficientSet::new(
            1,
            1,
            Arc::new(|_, x, _, out| {
                out[0] = -x[0];
                Ok(())
            }),
            Arc::new(|_, _, _, out| {
                out[0] = 1.0;
                Ok(())
            }),
        )
    }

    #[test]
    fn heat_matches_closed_form() {
        let dx = 0.02;
        let (u0, c) = heat_setup(dx);
        for (scheme, dt) in [(Scheme::SemiImplicit, 1e-3), (Scheme::Explicit, 2e-4)] {
            let cfg = SolverConfig::new(dt, scheme).recording(Record::At(vec![1.0]));
            let path = solve_nonlinear_fpe(&u0, &c, 0.0, 1.0, &cfg).unwrap();
            let exact = GridDensity1D::gaussian(*u0.grid(), 0.0, 1.1).unwrap();
            let err = path.last().l1_distance(&exact).unwrap();
            assert!(err <= 2.0 * dx + 10.0 * dt, "{scheme:?}: {err}");
            assert!(path.log().max_step_mass_error < 1e-12);
        }
    }

    #[test]
    fn nldbm_with_linear_beta_is_the_heat_equation() {
        let spec = NldbmSpec {
            beta: BetaForm::Linear { slope: 1.0 },
            b_scalar: DriftScalarForm::Constant { value: 0.0 },
            c: 1.0,
            alpha: 0.5,
            gamma: None,
            gamma1: None,
        };
        let (u0, heat) = heat_setup(0.02);
        let cfg = SolverConfig::new(1e-3, Scheme::SemiImplicit).recording(Record::At(vec![0.5]));
        let a = solve_nonlinear_fpe(&u0, &nldbm_coefficients(&spec.params(1)), 0.0, 0.5, &cfg).unwrap();
        let b = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.5, &cfg).unwrap();
        assert!(a.last().l1_distance(b.last()).unwrap() < 1e-9);
    }

    #[test]
    fn stationary_gaussian_stays_put() {
        let g = GridSpec::centered(6.0, 1e-2).unwrap();
        let u0 = GridDensity1D::gaussian(g, 0.0, 0.5).unwrap();
        let cfg = SolverConfig::new(2e-3, Scheme::SemiImplicit).recording(Record::Stride(250));
        let path = solve_nonlinear_fpe(&u0, &ou_drift(), 0.0, 5.0, &cfg).unwrap();
        for s in path.states() {
            assert!(s.l1_distance(&u0).unwrap() <= 1e-3);
        }
    }

    #[test]
    fn zero_length_request_returns_initial_state() {
        let (u0, c) = heat_setup(0.05);
        let path = solve_nonlinear_fpe(&u0, &c, 0.3, 0.3, &SolverConfig::new(1e-3, Scheme::SemiImplicit)).unwrap();
        assert_eq!(path.times(), &[0.3]);
        assert_eq!(path.first(), &u0);
    }

    #[test]
    fn explicit_scheme_enforces_cfl() {
        let (u0, c) = heat_setup(0.01);
        let cfg = SolverConfig::new(1e-2, Scheme::Explicit);
        assert!(matches!(solve_nonlinear_fpe(&u0, &c, 0.0, 0.1, &cfg), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn frozen_solve_reproduces_nonlinear_path() {
        let c = nldbm_coefficients(&NldbmSpec {
            beta: BetaForm::LinearPlusArctan { slope: 2.0 },
            b_scalar: DriftScalarForm::Lorentzian { amplitude: 1.0 },
            c: 1.0,
            alpha: 0.5,
            gamma: None,
            gamma1: None,
        }
        .params(1));
        let g = GridSpec::centered(8.0, 0.02).unwrap();
        let u0 = GridDensity1D::gaussian(g, 0.5, 0.3).unwrap();
        let dt = 1e-3;
        let cfg = SolverConfig::new(dt, Scheme::SemiImplicit);
        let flow = solve_nonlinear_fpe(&u0, &c, 0.0, 0.5, &cfg).unwrap();
        let frozen = solve_frozen_fpe(&u0, &flow, &c, &cfg).unwrap();
        assert_eq!(frozen.times(), flow.times());
        for (a, b) in frozen.states().iter().zip(flow.states()) {
            assert!(a.l1_distance(b).unwrap() <= 10.0 * dt);
        }
    }

    #[test]
    fn frozen_diffusion_conserves_mass_far_from_flow() {
        let (u0, heat) = heat_setup(0.02);
        let cfg = SolverConfig::new(1e-3, Scheme::SemiImplicit);
        let flow = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.2, &cfg).unwrap();
        let nu0 = GridDensity1D::dirac(*u0.grid(), 7.0, Default::default()).unwrap();
        let nu = solve_frozen_fpe(&nu0, &flow, &heat, &cfg).unwrap();
        assert!(nu.log().max_step_mass_error < 1e-12);
        assert!((nu.last().mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_solve_needs_coverage() {
        let (u0, heat) = heat_setup(0.05);
        let cfg = SolverConfig::new(1e-2, Scheme::SemiImplicit);
        let flow = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.2, &cfg).unwrap();
        assert!(matches!(solve_frozen_fpe_on(&u0, &flow, &heat, 0.0, 0.5, &cfg), Err(Error::FlowCoverage { .. })));
    }

    #[test]
    fn weak_residual_of_mass_and_second_moment() {
        let (u0, heat) = heat_setup(1e-2);
        let cfg = SolverConfig::new(1e-4, Scheme::SemiImplicit).recording(Record::Stride(100));
        let path = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.2, &cfg).unwrap();
        let one = fpe_weak_residual(&path, &heat, &TestFn::constant(1, 1.0)).unwrap();
        assert!(one.iter().all(|(_, r)| r.abs() < 1e-12));
        let sq = fpe_weak_residual(&path, &heat, &TestFn::monomial(2)).unwrap();
        assert!(sq.iter().all(|(_, r)| r.abs() <= 1e-3), "{sq:?}");
    }

    #[test]
    fn record_at_hits_requested_times() {
        let (u0, heat) = heat_setup(0.05);
        let cfg = SolverConfig::new(0.03, Scheme::SemiImplicit).recording(Record::At(vec![0.1, 0.25]));
        let path = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.4, &cfg).unwrap();
        assert_eq!(path.times(), &[0.0, 0.1, 0.25, 0.4]);
    }

    #[test]
    fn csv_and_manifest() {
        let (u0, heat) = heat_setup(0.5);
        let cfg = SolverConfig::new(0.05, Scheme::SemiImplicit);
        let path = solve_nonlinear_fpe(&u0, &heat, 0.0, 0.1, &cfg).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,u\n"));
        assert_eq!(text.lines().count(), 1 + 3 * u0.grid().n);
        let manifest: serde_json::Value = serde_json::from_str(&path.manifest_json().unwrap()).unwrap();
        assert_eq!(manifest["scheme"], "semi_implicit");
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let w = [1.0, 2.0, 0.5, 3.0];
        let rhs = [1.0, -2.0, 0.3, 4.0];
        let x = solve_diffusion_system(&w, 0.7, 1.0, &rhs);
        // multiply back
        let mut lap = [0.0; 4];
        let p: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a * b).collect();
        laplacian(&p, 1.0, &mut lap);
        for i in 0..4 {
            assert!((x[i] - 0.7 * lap[i] - rhs[i]).abs() < 1e-12);
        }
        assert!((x.iter().sum::<f64>() - rhs.iter().sum::<f64>()).abs() < 1e-12);
    }
}
