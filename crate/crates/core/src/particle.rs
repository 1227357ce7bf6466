//! Euler–Maruyama simulation of interacting particle systems (the law in the
//! coefficients replaced by the empirical measure of the system) and of
//! independent replicas driven by a frozen flow of laws.

use std::io::{Read, Write};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, MeasureView, Side};
use crate::error::{Error, Result};
use crate::exec::{exact_sum, try_for_each_chunk_with, Execution};
use crate::fpe::{check_horizon, keep, requested_times, schedule, DensityPath, Record};
use crate::measure::io::write_measure_csv;
use crate::measure::{BinnedKde, EmpiricalMeasure, GridDensity1D, GridSpec, Law};
use crate::rng::{self, Stream};

/// Steps between automatic bandwidth updates.
pub const BANDWIDTH_REFRESH: usize = 100;
const ENSEMBLE_MAGIC: &[u8; 8] = b"MKVENS01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    McKeanVlasov,
    FrozenFlow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

/// KDE bandwidth: `"auto"` (`N^{-1/5}·σ̂`, refreshed every 100 steps) or fixed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Auto(AutoTag),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Auto(AutoTag::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub dt: f64,
    #[serde(default)]
    pub bandwidth: Bandwidth,
    pub seed: u64,
    /// Noise stream of particle `i` is `stream_ids[i]` (default `i`).
    #[serde(default)]
    pub stream_ids: Option<Vec<u64>>,
    /// Grid for density views of Nemytskii coefficients.
    #[serde(default)]
    pub kde_grid: Option<GridSpec>,
    #[serde(default)]
    pub record: Record,
    #[serde(default)]
    pub execution: Execution,
}

impl SimConfig {
    pub fn new(n_particles: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_particles,
            dt,
            bandwidth: Bandwidth::default(),
            seed,
            stream_ids: None,
            kde_grid: None,
            record: Record::EveryStep,
            execution: Execution::Parallel,
        }
    }

    pub fn recording(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn with_kde_grid(mut self, grid: GridSpec) -> Self {
        self.kde_grid = Some(grid);
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn validate(&self, interacting: bool) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt = {} must be positive", self.dt)));
        }
        let min = if interacting { 2 } else { 1 };
        if self.n_particles < min {
            return Err(Error::InvalidArgument(format!("need at least {min} particles, got {}", self.n_particles)));
        }
        if let Some(ids) = &self.stream_ids {
            if ids.len() != self.n_particles {
                return Err(Error::InvalidArgument(format!("{} stream ids for {} particles", ids.len(), self.n_particles)));
            }
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument(format!("bandwidth {h} must be positive")));
            }
        }
        if let Record::Stride(0) = self.record {
            return Err(Error::InvalidArgument("record stride must be positive".into()));
        }
        Ok(())
    }

    fn streams(&self) -> Vec<Stream> {
        match &self.stream_ids {
            Some(ids) => rng::streams(self.seed, ids.iter().copied()),
            None => rng::streams(self.seed, 0..self.n_particles as u64),
        }
    }
}

/// Monitors for density views built during an interacting run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KdeDiagnostics {
    pub last_bandwidth: Option<f64>,
    pub max_sup_norm: f64,
}

/// Recorded trajectories, stored replica-major: replica `r`, time index `k`,
/// coordinate `j` lives at `(r·T + k)·d + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    times: Vec<f64>,
    dim: usize,
    replicas: usize,
    data: Vec<f64>,
    seed: u64,
    kind: EnsembleKind,
    kde: KdeDiagnostics,
}

impl PathEnsemble {
    fn from_snapshots(times: Vec<f64>, snapshots: Vec<Vec<f64>>, dim: usize, seed: u64, kind: EnsembleKind, kde: KdeDiagnostics) -> Self {
        let t = times.len();
        let replicas = snapshots[0].len() / dim;
        let mut data = vec![0.0; replicas * t * dim];
        for (k, snap) in snapshots.iter().enumerate() {
            for r in 0..replicas {
                let dst = (r * t + k) * dim;
                data[dst..dst + dim].copy_from_slice(&snap[r * dim..(r + 1) * dim]);
            }
        }
        Self { times, dim, replicas, data, seed, kind, kde }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn replicas(&self) -> usize {
        self.replicas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn kde_diagnostics(&self) -> &KdeDiagnostics {
        &self.kde
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Position of replica `r` at time index `k`.
    pub fn position(&self, r: usize, k: usize) -> &[f64] {
        let i = (r * self.times.len() + k) * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Trajectory of replica `r` (T×d row-major).
    pub fn path(&self, r: usize) -> &[f64] {
        let n = self.times.len() * self.dim;
        &self.data[r * n..(r + 1) * n]
    }

    /// All positions at time index `k`, replica order.
    pub fn positions_at(&self, k: usize) -> Vec<f64> {
        (0..self.replicas).flat_map(|r| self.position(r, k).iter().copied()).collect()
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

    pub fn marginal_at(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.positions_at(k)).expect("ensemble positions are finite")
    }

    /// Binary layout, all little endian: the 8-byte magic `MKVENS01`, then
    /// u64 `dim`, u64 `replicas`, u64 `T`, u64 `seed`, u64 `kind`
    /// (0 interacting, 1 frozen flow), `T` f64 times, and the replica-major
    /// f64 payload.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(ENSEMBLE_MAGIC)?;
        let kind = match self.kind {
            EnsembleKind::McKeanVlasov => 0u64,
            EnsembleKind::FrozenFlow => 1,
        };
        for v in [self.dim as u64, self.replicas as u64, self.times.len() as u64, self.seed, kind] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in self.times.iter().chain(&self.data) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != ENSEMBLE_MAGIC {
            return Err(Error::Parse("not an ensemble file".into()));
        }
        let mut word = [0u8; 8];
        let mut next_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let dim = next_u64(&mut input)? as usize;
        let replicas = next_u64(&mut input)? as usize;
        let t = next_u64(&mut input)? as usize;
        let seed = next_u64(&mut input)?;
        let kind = match next_u64(&mut input)? {
            0 => EnsembleKind::McKeanVlasov,
            1 => EnsembleKind::FrozenFlow,
            k => return Err(Error::Parse(format!("unknown ensemble kind {k}"))),
        };
        let total = dim.checked_mul(replicas).and_then(|v| v.checked_mul(t)).ok_or_else(|| Error::Parse("ensemble too large".into()))?;
        let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf)?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let times = read_f64s(t)?;
        let data = read_f64s(total)?;
        Ok(Self { times, dim, replicas, data, seed, kind, kde: KdeDiagnostics::default() })
    }

    /// CSV of the marginal law at `t` (columns `x1..xd,weight`).
    pub fn write_marginal_csv<W: Write>(&self, t: f64, out: W) -> Result<()> {
        write_measure_csv(&marginal(self, t)?, out)
    }
}

/// Uniform cloud over replicas at the recorded time nearest to `t`.
pub fn marginal(ensemble: &PathEnsemble, t: f64) -> Result<EmpiricalMeasure> {
    let tol = 1e-9 * (1.0 + ensemble.end().abs());
    if t < ensemble.start() - tol || t > ensemble.end() + tol {
        return Err(Error::OutsideHorizon { t, start: ensemble.start(), end: ensemble.end() });
    }
    let k = ensemble.nearest_index(t);
    let offset = ensemble.times[k] - t;
    if offset.abs() > tol {
        debug!("marginal at t = {t} snapped to recorded time {} (offset {offset:e})", ensemble.times[k]);
    }
    Ok(ensemble.marginal_at(k))
}

/// Initial particle positions: the cloud itself when it already has `n`
/// uniform atoms, a multinomial resample otherwise.
fn initial_positions(theta0: &EmpiricalMeasure, n: usize, seed: u64) -> Vec<f64> {
    if theta0.len() == n && theta0.is_uniform() {
        theta0.points().to_vec()
    } else {
        let mut r = rng::stream(rng::derive_seed(seed, 0x5eed), 0);
        theta0.resample(n, &mut r).points().to_vec()
    }
}

const SMALL: usize = 16;

/// Euler–Maruyama update of every particle against one frozen view.
#[allow(clippy::too_many_arguments)]
pub(crate) fn advance(
    exec: Execution,
    coeffs: &CoefficientSet,
    side: Side,
    positions: &mut [f64],
    streams: &mut [Stream],
    t: f64,
    h: f64,
    view: &MeasureView<'_>,
) -> Result<()> {
    let d = coeffs.dim();
    let m = coeffs.noise_dim();
    let sqrt_h = h.sqrt();
    try_for_each_chunk_with(exec, positions, d, streams, |i, x, stream| {
        let mut b_small = [0.0; SMALL];
        let mut s_small = [0.0; SMALL];
        let mut z_small = [0.0; SMALL];
        let (mut b_heap, mut s_heap, mut z_heap);
        let (b, s, z): (&mut [f64], &mut [f64], &mut [f64]) = if d <= SMALL && d * m <= SMALL {
            (&mut b_small[..d], &mut s_small[..d * m], &mut z_small[..m])
        } else {
            b_heap = vec![0.0; d];
            s_heap = vec![0.0; d * m];
            z_heap = vec![0.0; m];
            (&mut b_heap, &mut s_heap, &mut z_heap)
        };
        let wrap = |e: Error| match e {
            Error::MissingDensityView => e,
            other => Error::CoefficientEvaluation { index: i, time: t, reason: other.to_string() },
        };
        coeffs.drift_into(side, t, x, view, b).map_err(wrap)?;
        coeffs.diffusion_into(side, t, x, view, s).map_err(wrap)?;
        for zk in z.iter_mut() {
            *zk = rng::normal(stream) * sqrt_h;
        }
        for j in 0..d {
            let noise: f64 = (0..m).map(|k| s[j * m + k] * z[k]).sum();
            x[j] += b[j] * h + noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::CoefficientEvaluation { index: i, time: t, reason: "particle left the finite range".into() });
        }
        Ok(())
    })
}

/// Order-independent mean and second moment of row-major positions.
fn cloud_moments(exec: Execution, positions: &[f64], d: usize) -> (Vec<f64>, f64, f64) {
    let n = positions.len() / d;
    let mean: Vec<f64> = (0..d).map(|j| exact_sum(exec, n, |i| positions[i * d + j]) / n as f64).collect();
    let m2 = exact_sum(exec, n, |i| positions[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>()) / n as f64;
    let var0 = exact_sum(exec, n, |i| (positions[i * d] - mean[0]).powi(2)) / n as f64;
    (mean, m2, var0)
}

fn default_kde_grid(positions: &[f64]) -> Result<GridSpec> {
    let lo = positions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 5.0 + 0.5 * (hi - lo);
    GridSpec::covering(lo - pad, hi + pad, 1e-2)
}

/// Builds the frozen view of the particle cloud at each step: exact-sum
/// moments, plus a binned KDE when the coefficients read a density.
struct CloudViews {
    grid: Option<GridSpec>,
    bandwidth: Bandwidth,
    kde: Option<BinnedKde>,
    diagnostics: KdeDiagnostics,
}

impl CloudViews {
    fn new(coeffs: &CoefficientSet, cfg: &SimConfig, positions: &[f64]) -> Result<Self> {
        let grid = match (coeffs.requires_density(), cfg.kde_grid) {
            (true, Some(g)) => Some(g),
            (true, None) => Some(default_kde_grid(positions)?),
            (false, _) => None,
        };
        Ok(Self { grid, bandwidth: cfg.bandwidth, kde: None, diagnostics: KdeDiagnostics::default() })
    }

    fn build(&mut self, step: usize, exec: Execution, positions: &[f64], d: usize) -> Result<(EmpiricalMeasure, Option<GridDensity1D>, Vec<f64>, f64)> {
        let n = positions.len() / d;
        let (mean, m2, var0) = cloud_moments(exec, positions, d);
        let density = match self.grid {
            Some(grid) => {
                let refresh = step.is_multiple_of(BANDWIDTH_REFRESH);
                if self.kde.is_none() || (refresh && matches!(self.bandwidth, Bandwidth::Auto(_))) {
                    let h = match self.bandwidth {
                        Bandwidth::Fixed(h) => h,
                        Bandwidth::Auto(_) => ((n as f64).powf(-0.2) * var0.max(0.0).sqrt()).max(grid.dx),
                    };
                    self.kde = Some(BinnedKde::new(grid, h)?);
                    self.diagnostics.last_bandwidth = Some(h);
                }
                let rho = self.kde.as_ref().expect("built above").estimate(positions, exec)?;
                self.diagnostics.max_sup_norm = self.diagnostics.max_sup_norm.max(rho.sup_norm());
                Some(rho)
            }
            None => None,
        };
        Ok((EmpiricalMeasure::uniform(d, positions.to_vec())?, density, mean, m2))
    }
}

fn check_interacting(theta0: &EmpiricalMeasure, coeffs: &CoefficientSet) -> Result<()> {
    let d = coeffs.dim();
    if theta0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: theta0.dim() });
    }
    if coeffs.requires_density() && d != 1 {
        return Err(Error::InvalidArgument("density views are only available in one dimension".into()));
    }
    Ok(())
}

/// The interacting particle system: at every step the empirical measure of
/// all particles is frozen (moments, and a KDE density when the
/// coefficients need one), then every particle takes one Euler–Maruyama step.
pub fn simulate_mckean_vlasov(
    theta0: &EmpiricalMeasure,
    coeffs: &CoefficientSet,
    s: f64,
    t_end: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    cfg.validate(true)?;
    check_horizon(s, t_end)?;
    check_interacting(theta0, coeffs)?;
    let d = coeffs.dim();
    let exec = cfg.execution;
    let mut positions = initial_positions(theta0, cfg.n_particles, cfg.seed);
    let mut streams = cfg.streams();
    let mut views = CloudViews::new(coeffs, cfg, &positions)?;
    let nodes = schedule(s, t_end, requested_times(&cfg.record), cfg.dt);
    let mut times = vec![s];
    let mut snapshots = vec![positions.clone()];
    for k in 1..nodes.len() {
        let (t0, t1) = (nodes[k - 1].0, nodes[k].0);
        let (cloud, density, mean, m2) = views.build(k - 1, exec, &positions, d)?;
        let view = MeasureView::from_parts(Law::Cloud(&cloud), density, mean, m2);
        advance(exec, coeffs, Side::Nonlinear, &mut positions, &mut streams, t0, t1 - t0, &view)?;
        if keep(&cfg.record, k, nodes[k].1, k + 1 == nodes.len()) {
            times.push(t1);
            snapshots.push(positions.clone());
        }
    }
    Ok(PathEnsemble::from_snapshots(times, snapshots, d, cfg.seed, EnsembleKind::McKeanVlasov, views.diagnostics))
}

/// Seed tag of the companion cloud's noise in [`simulate_with_companion`].
const COMPANION_STREAMS: u64 = 0xc0_4d9a;

/// The interacting system together with a second cloud of independent
/// companion particles started from `x0_law` and driven by the interacting
/// cloud's empirical measure. The companion cloud is advanced against the
/// same frozen view at every step, so no flow has to be stored. Both clouds
/// have `cfg.n_particles` particles and are recorded at the same times.
pub fn simulate_with_companion(
    theta0: &EmpiricalMeasure,
    x0_law: &EmpiricalMeasure,
    coeffs: &CoefficientSet,
    s: f64,
    t_end: f64,
    cfg: &SimConfig,
) -> Result<(PathEnsemble, PathEnsemble)> {
    cfg.validate(true)?;
    check_horizon(s, t_end)?;
    check_interacting(theta0, coeffs)?;
    check_interacting(x0_law, coeffs)?;
    let d = coeffs.dim();
    let exec = cfg.execution;
    let companion_seed = rng::derive_seed(cfg.seed, COMPANION_STREAMS);
    let mut positions = initial_positions(theta0, cfg.n_particles, cfg.seed);
    let mut companions = initial_positions(x0_law, cfg.n_particles, companion_seed);
    let mut streams = cfg.streams();
    let mut companion_streams = SimConfig { seed: companion_seed, ..cfg.clone() }.streams();
    let mut views = CloudViews::new(coeffs, cfg, &positions)?;
    let nodes = schedule(s, t_end, requested_times(&cfg.record), cfg.dt);
    let mut times = vec![s];
    let mut snapshots = vec![positions.clone()];
    let mut companion_snapshots = vec![companions.clone()];
    for k in 1..nodes.len() {
        let (t0, t1) = (nodes[k - 1].0, nodes[k].0);
        let (cloud, density, mean, m2) = views.build(k - 1, exec, &positions, d)?;
        let view = MeasureView::from_parts(Law::Cloud(&cloud), density, mean, m2);
        advance(exec, coeffs, Side::Companion, &mut companions, &mut companion_streams, t0, t1 - t0, &view)?;
        advance(exec, coeffs, Side::Nonlinear, &mut positions, &mut streams, t0, t1 - t0, &view)?;
        if keep(&cfg.record, k, nodes[k].1, k + 1 == nodes.len()) {
            times.push(t1);
            snapshots.push(positions.clone());
            companion_snapshots.push(companions.clone());
        }
    }
    let mu = PathEnsemble::from_snapshots(times.clone(), snapshots, d, cfg.seed, EnsembleKind::McKeanVlasov, views.diagnostics);
    let nu = PathEnsemble::from_snapshots(times, companion_snapshots, d, companion_seed, EnsembleKind::FrozenFlow, KdeDiagnostics::default());
    Ok((mu, nu))
}

/// A stored flow of laws that frozen replicas read their coefficients from.
#[derive(Clone, Copy, Debug)]
pub enum Flow<'a> {
    Grid(&'a DensityPath),
    /// Marginals of a particle ensemble, with the KDE used for density views.
    Ensemble { ensemble: &'a PathEnsemble, kde: Option<(GridSpec, f64)> },
}

impl<'a> From<&'a DensityPath> for Flow<'a> {
    fn from(p: &'a DensityPath) -> Self {
        Flow::Grid(p)
    }
}

pub(crate) enum OwnedLaw {
    Grid(GridDensity1D),
    Cloud(EmpiricalMeasure, Option<GridDensity1D>),
}

impl OwnedLaw {
    pub(crate) fn view(&self) -> MeasureView<'_> {
        match self {
            OwnedLaw::Grid(g) => MeasureView::of_grid(g),
            OwnedLaw::Cloud(c, d) => {
                let v = MeasureView::of_cloud(c);
                match d {
                    Some(d) => v.with_density(d.clone()),
                    None => v,
                }
            }
        }
    }
}

impl Flow<'_> {
    pub fn start(&self) -> f64 {
        match self {
            Flow::Grid(p) => p.start(),
            Flow::Ensemble { ensemble, .. } => ensemble.start(),
        }
    }

    pub fn end(&self) -> f64 {
        match self {
            Flow::Grid(p) => p.end(),
            Flow::Ensemble { ensemble, .. } => ensemble.end(),
        }
    }

    pub(crate) fn law_at(&self, t: f64) -> Result<OwnedLaw> {
        match self {
            Flow::Grid(p) => Ok(OwnedLaw::Grid(p.state_at(t)?)),
            Flow::Ensemble { ensemble, kde } => {
                let cloud = marginal(ensemble, t)?;
                let density = match kde {
                    Some((grid, h)) => Some(BinnedKde::new(*grid, *h)?.estimate(cloud.points(), Execution::Sequential)?),
                    None => None,
                };
                Ok(OwnedLaw::Cloud(cloud, density))
            }
        }
    }
}

/// Independent replicas of the companion dynamics driven by `flow`.
pub fn simulate_frozen<'a>(
    x0_law: &EmpiricalMeasure,
    flow: impl Into<Flow<'a>>,
    coeffs_bar: &CoefficientSet,
    s: f64,
    t_end: f64,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    cfg.validate(false)?;
    check_horizon(s, t_end)?;
    let flow = flow.into();
    let tol = 1e-9 * (1.0 + flow.end().abs());
    if s < flow.start() - tol || t_end > flow.end() + tol {
        return Err(Error::FlowCoverage { start: s, end: t_end, available_start: flow.start(), available_end: flow.end() });
    }
    let d = coeffs_bar.dim();
    if x0_law.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x0_law.dim() });
    }
    let mut positions = initial_positions(x0_law, cfg.n_particles, cfg.seed);
    let mut streams = cfg.streams();
    let nodes = schedule(s, t_end, requested_times(&cfg.record), cfg.dt);
    let mut times = vec![s];
    let mut snapshots = vec![positions.clone()];
    for k in 1..nodes.len() {
        let (t0, t1) = (nodes[k - 1].0, nodes[k].0);
        let law = flow.law_at(t0)?;
        advance(cfg.execution, coeffs_bar, Side::Companion, &mut positions, &mut streams, t0, t1 - t0, &law.view())?;
        if keep(&cfg.record, k, nodes[k].1, k + 1 == nodes.len()) {
            times.push(t1);
            snapshots.push(positions.clone());
        }
    }
    Ok(PathEnsemble::from_snapshots(times, snapshots, d, cfg.seed, EnsembleKind::FrozenFlow, KdeDiagnostics::default()))
}
