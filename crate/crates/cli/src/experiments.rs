//! The eight experiments. Each returns a result table, a JSON document, an
//! optional plot and the list of invariant violations it found.

use std::sync::Arc;

use mvlift::coefficients::{meanfield_ou_coefficients, nldbm_coefficients, validate_hypotheses, CoefficientSet, HypothesisTarget, MeasureView};
use mvlift::cylindrical::{CylindricalFunction, OuterFn, TestFn};
use mvlift::ergodicity::{decay_study, find_invariant, Backend, DecayConfig, DecayStart, InvariantMethod, LongRunConfig};
use mvlift::feynman_kac::{l_derivative_fd, pde_residual, FdSteps, FkBatch, FkConfig, FkProblem, FlowBackend, ProbeLaw};
use mvlift::fpe::{solve_frozen_fpe, solve_nonlinear_fpe, Record, SolverConfig};
use mvlift::lift::{chapman_kolmogorov_residual, KernelConfig, LiftedTestFunction};
use mvlift::measure::wasserstein::wasserstein2_cloud_grid;
use mvlift::measure::{EmpiricalMeasure, GridDensity1D, GridSpec, Law, Mollifier};
use mvlift::particle::{simulate_frozen, simulate_mckean_vlasov, AutoTag, Bandwidth, SimConfig};
use mvlift::{rng, Error};
use rand::Rng;
use serde_json::{json, Value};

use crate::config::{BandwidthChoice, Coefficients, Experiment, ExperimentConfig, InitialLaw, Params};
use crate::output::Table;
use crate::plot::{PlotStyle, Series};

/// Per-step mass error above which an FPE run is reported as a violation.
pub const MASS_TOL: f64 = 1e-12;
/// Cumulative clipped mass above which an FPE run is reported as a violation.
pub const CLIP_TOL: f64 = 1e-6;

const INITIAL_TAG: u64 = 0x1417;
const COMPANION_TAG: u64 = 0xc0de;
const GRADIENT_TAG: u64 = 0x9ad;

pub struct Outcome {
    pub table: Table,
    pub json: Value,
    pub plot: Option<(Vec<Series>, PlotStyle)>,
    pub violations: Vec<String>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    log::info!("running {} with seed {}", cfg.experiment.name(), cfg.seed);
    match cfg.experiment {
        Experiment::SimulateMkv => simulate_mkv(cfg),
        Experiment::SolveFpe => solve_fpe(cfg),
        Experiment::FrozenCompare => frozen_compare(cfg),
        Experiment::CheckCk => check_ck(cfg),
        Experiment::Ergodicity => ergodicity(cfg),
        Experiment::FeynmanKac => feynman_kac(cfg),
        Experiment::GradientCheck => gradient_check(cfg),
        Experiment::ValidateHypotheses => hypotheses(cfg),
    }
}

pub fn coefficient_set(c: &Coefficients) -> CoefficientSet {
    match c {
        Coefficients::Heat => CoefficientSet::heat(1),
        Coefficients::MeanfieldOu { lambda0, kappa0, sigma0 } => meanfield_ou_coefficients(*lambda0, *kappa0, *sigma0).0,
        Coefficients::Nldbm(spec) => nldbm_coefficients(&spec.params(1)),
    }
}

/// `(λ₀, κ₀, σ₀)` of the linear families; heat is `(0, 0, 1)`.
fn linear_params(c: &Coefficients) -> Option<(f64, f64, f64)> {
    match c {
        Coefficients::Heat => Some((0.0, 0.0, 1.0)),
        Coefficients::MeanfieldOu { lambda0, kappa0, sigma0 } => Some((*lambda0, *kappa0, *sigma0)),
        Coefficients::Nldbm(_) => None,
    }
}

fn grid(cfg: &ExperimentConfig) -> Result<GridSpec, Error> {
    GridSpec::centered(cfg.grid.half_width, cfg.grid.dx)
}

fn on_grid(law: &InitialLaw, g: GridSpec) -> Result<GridDensity1D, Error> {
    match *law {
        InitialLaw::Gaussian { mean, variance } => GridDensity1D::gaussian(g, mean, variance),
        InitialLaw::Dirac { x } => GridDensity1D::dirac(g, x, Mollifier::default()),
    }
}

fn as_cloud(law: &InitialLaw, n: usize, seed: u64, tag: u64) -> Result<EmpiricalMeasure, Error> {
    match *law {
        InitialLaw::Gaussian { mean, variance } => {
            let mut r = rng::stream(rng::derive_seed(seed, tag), 0);
            let sd = variance.sqrt();
            EmpiricalMeasure::uniform(1, (0..n).map(|_| mean + sd * rng::normal(&mut r)).collect())
        }
        InitialLaw::Dirac { x } => Ok(EmpiricalMeasure::dirac(&[x])),
    }
}

fn law_moments(law: &InitialLaw) -> (f64, f64) {
    match *law {
        InitialLaw::Gaussian { mean, variance } => (mean, variance),
        InitialLaw::Dirac { x } => (x, 0.0),
    }
}

fn output_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let n = cfg.numerics.outputs;
    (1..=n).map(|k| cfg.numerics.horizon * k as f64 / n as f64).collect()
}

fn solver(cfg: &ExperimentConfig) -> SolverConfig {
    SolverConfig::new(cfg.numerics.dt, cfg.numerics.scheme)
}

fn sim(cfg: &ExperimentConfig, n: usize, coeffs: &CoefficientSet) -> Result<SimConfig, Error> {
    let mut s = SimConfig::new(n, cfg.numerics.dt, cfg.seed).with_execution(cfg.execution);
    s.bandwidth = match cfg.numerics.bandwidth {
        BandwidthChoice::Auto(_) => Bandwidth::Auto(AutoTag::Auto),
        BandwidthChoice::Fixed(h) => Bandwidth::Fixed(h),
    };
    if coeffs.requires_density() {
        s = s.with_kde_grid(grid(cfg)?);
    }
    Ok(s)
}

fn style(title: &str, x: &str, y: &str, log_y: bool) -> PlotStyle {
    PlotStyle { title: title.into(), x_label: x.into(), y_label: y.into(), log_y }
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var, m2)
}

/// Exact mean and variance of the linear families at time `t`.
fn linear_moments(p: (f64, f64, f64), m0: f64, v0: f64, t: f64) -> (f64, f64) {
    let (l, k, s) = p;
    let mean = m0 * (-(l - k) * t).exp();
    let relax = if l == 0.0 { t } else { -(-2.0 * l * t).exp_m1() / (2.0 * l) };
    (mean, v0 * (-2.0 * l * t).exp() + s * s * relax)
}

fn simulate_mkv(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let coeffs = coefficient_set(&cfg.coefficients);
    let n = cfg.numerics.n_particles;
    let theta0 = as_cloud(&cfg.initial, n, cfg.seed, INITIAL_TAG)?;
    let sc = sim(cfg, n, &coeffs)?.recording(Record::At(output_times(cfg)));
    let ens = simulate_mckean_vlasov(&theta0, &coeffs, 0.0, cfg.numerics.horizon, &sc)?;
    let exact = linear_params(&cfg.coefficients);
    let (m0, v0) = law_moments(&cfg.initial);
    let mut header = vec!["t", "mean", "variance", "second_moment"];
    if exact.is_some() {
        header.extend(["mean_exact", "variance_exact"]);
    }
    let mut table = Table::new(&header);
    for (k, &t) in ens.times().iter().enumerate() {
        let (mean, var, m2) = moments(&ens.positions_at(k));
        let mut row = vec![t.into(), mean.into(), var.into(), m2.into()];
        if let Some(p) = exact {
            let (me, ve) = linear_moments(p, m0, v0, t);
            row.extend([me.into(), ve.into()]);
        }
        table.push(row);
    }
    let col = |c: &str| table.column(c).unwrap_or_default();
    let mut json = json!({
        "times": col("t"),
        "mean": col("mean"),
        "variance": col("variance"),
        "second_moment": col("second_moment"),
        "n_particles": n,
        "kde": ens.kde_diagnostics(),
    });
    let t = col("t");
    let mut series = vec![Series::new("mean", &t, &col("mean")), Series::new("variance", &t, &col("variance"))];
    if exact.is_some() {
        json["mean_exact"] = json!(col("mean_exact"));
        json["variance_exact"] = json!(col("variance_exact"));
        series.push(Series::new("mean (exact)", &t, &col("mean_exact")));
        series.push(Series::new("variance (exact)", &t, &col("variance_exact")));
    }
    Ok(Outcome { json, plot: Some((series, style("particle moments", "t", "moment", false))), table, violations: vec![] })
}

fn solve_fpe(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let coeffs = coefficient_set(&cfg.coefficients);
    let u0 = on_grid(&cfg.initial, grid(cfg)?)?;
    let path = solve_nonlinear_fpe(&u0, &coeffs, 0.0, cfg.numerics.horizon, &solver(cfg).recording(Record::At(output_times(cfg))))?;
    let mut table = Table::new(&["t", "mass", "mean", "variance", "sup_norm"]);
    for (t, u) in path.times().iter().zip(path.states()) {
        table.push(vec![(*t).into(), u.mass().into(), u.mean().into(), u.variance().into(), u.sup_norm().into()]);
    }
    let log = path.log();
    let mut violations = Vec::new();
    if log.max_step_mass_error > MASS_TOL {
        violations.push(format!("per-step mass error {:.3e} exceeds {MASS_TOL:e}", log.max_step_mass_error));
    }
    if log.clipped_mass > CLIP_TOL {
        violations.push(format!("clipped mass {:.3e} exceeds {CLIP_TOL:e}", log.clipped_mass));
    }
    let t = table.column("t").unwrap_or_default();
    let series = vec![Series::new("mean", &t, &table.column("mean").unwrap_or_default()), Series::new("variance", &t, &table.column("variance").unwrap_or_default())];
    let json = json!({
        "times": t,
        "mass": table.column("mass"),
        "mean": table.column("mean"),
        "variance": table.column("variance"),
        "sup_norm": table.column("sup_norm"),
        "grid": path.grid(),
        "conservation": log,
    });
    Ok(Outcome { table, json, plot: Some((series, style("density moments", "t", "moment", false))), violations })
}

fn frozen_compare(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let coeffs = coefficient_set(&cfg.coefficients);
    let bar = coeffs.companion();
    let g = grid(cfg)?;
    let companion = cfg.companion_initial.unwrap_or(cfg.initial);
    let u0 = on_grid(&cfg.initial, g)?;
    let nu0 = on_grid(&companion, g)?;
    let times = output_times(cfg);
    let flow = solve_nonlinear_fpe(&u0, &coeffs, 0.0, cfg.numerics.horizon, &solver(cfg).recording(Record::EveryStep))?;
    let nu = solve_frozen_fpe(&nu0, &flow, &bar, &solver(cfg).recording(Record::At(times.clone())))?;
    let n = cfg.numerics.n_particles;
    let x0 = as_cloud(&companion, n, cfg.seed, COMPANION_TAG)?;
    let ens = simulate_frozen(&x0, &flow, &bar, 0.0, cfg.numerics.horizon, &sim(cfg, n, &coeffs)?.recording(Record::At(times)))?;
    let tol = match &cfg.params {
        Some(Params::Frozen(p)) if p.tolerance.is_some() => p.tolerance.unwrap_or_default(),
        _ => 5.0 / (n as f64).sqrt() + 5.0 * cfg.numerics.dt + cfg.grid.dx,
    };
    let mut table = Table::new(&["t", "w2", "mean_particles", "mean_fpe", "tolerance"]);
    let mut violations = Vec::new();
    for (k, &t) in ens.times().iter().enumerate() {
        let cloud = ens.marginal_at(k);
        let rho = nu.state_at(t)?;
        let w2 = wasserstein2_cloud_grid(&cloud, &rho);
        if !(w2 <= tol) {
            violations.push(format!("W2 between frozen particles and frozen FPE is {w2:.3e} > {tol:.3e} at t = {t}"));
        }
        table.push(vec![t.into(), w2.into(), cloud.integrate(|x| x[0]).into(), rho.mean().into(), tol.into()]);
    }
    let t = table.column("t").unwrap_or_default();
    let w2 = table.column("w2").unwrap_or_default();
    let json = json!({ "times": t, "w2": w2, "tolerance": tol, "n_particles": n, "conservation": nu.log() });
    let series = vec![Series::new("W2(particles, FPE)", &t, &w2), Series::new("tolerance", &t, &vec![tol; t.len()])];
    Ok(Outcome { table, json, plot: Some((series, style("frozen dynamics: particles vs FPE", "t", "W2", false))), violations })
}

fn test_fn(name: &str) -> TestFn {
    match name {
        "one" => TestFn::constant(1, 1.0),
        "x" => TestFn::coordinate(1, 0),
        "sin" => TestFn::sine(1.0, 0.0),
        "bump" => TestFn::bump(0.0, 1.0),
        _ => TestFn::monomial(2),
    }
}

fn cylindrical(name: &str) -> CylindricalFunction {
    match name {
        "mean" => CylindricalFunction::mean(1, 0),
        "m2" => CylindricalFunction::linear(TestFn::monomial(2)),
        "sin" => CylindricalFunction::linear(TestFn::sine(1.0, 0.0)),
        _ => CylindricalFunction::constant(1, 1.0),
    }
}

fn check_ck(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let Some(Params::Ck(p)) = &cfg.params else { unreachable!("validated config") };
    let coeffs = coefficient_set(&cfg.coefficients);
    let zeta = on_grid(&cfg.initial, grid(cfg)?)?;
    let g = LiftedTestFunction::new(test_fn(&p.h), cylindrical(&p.f));
    let mut kc = KernelConfig::fpe(solver(cfg));
    kc.execution = cfg.execution;
    let report = chapman_kolmogorov_residual(p.x, &zeta, p.s, p.r, p.t, &coeffs, &g, p.quad_points, &kc)?;
    let passed = report.residual <= p.tolerance;
    let mut table = Table::new(&["x", "s", "r", "t", "direct", "composed", "residual", "tolerance"]);
    table.push(vec![report.x.into(), report.s.into(), report.r.into(), report.t.into(), report.direct.into(), report.composed.into(), report.residual.into(), p.tolerance.into()]);
    let violations = if passed { vec![] } else { vec![format!("Chapman-Kolmogorov residual {:.3e} exceeds tolerance {:.3e}", report.residual, p.tolerance)] };
    let json = json!({ "report": report, "tolerance": p.tolerance, "passed": passed, "test_function": { "h": p.h, "F": p.f } });
    Ok(Outcome { table, json, plot: None, violations })
}

fn ergodicity(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let Some(Params::Ergodicity(p)) = &cfg.params else { unreachable!("validated config") };
    let Coefficients::MeanfieldOu { lambda0, kappa0, sigma0 } = cfg.coefficients else { unreachable!("validated config") };
    let (coeffs, constants) = meanfield_ou_coefficients(lambda0, kappa0, sigma0);
    constants.check_ergodic()?;
    let g = grid(cfg)?;
    let backend = match p.backend.as_str() {
        "particle" => Backend::Particle { sim: sim(cfg, cfg.numerics.n_particles, &coeffs)? },
        _ => Backend::Fpe { solver: solver(cfg), grid: g },
    };
    let method = match p.invariant.as_str() {
        "long_run" => InvariantMethod::LongRun(LongRunConfig::new(backend.clone(), p.window, p.max_horizon)),
        _ => InvariantMethod::MomentFixedPoint,
    };
    let invariant = find_invariant(&coeffs, &constants, &method)?;
    let zeta = on_grid(&cfg.initial, g)?;
    let theta = on_grid(&cfg.companion_initial.unwrap_or(cfg.initial), g)?;
    let dc = DecayConfig {
        horizon: cfg.numerics.horizon,
        n_checkpoints: p.n_checkpoints,
        backend,
        test_functions: vec![TestFn::coordinate(1, 0), TestFn::monomial(2)],
        execution: cfg.execution,
    };
    let report = decay_study(DecayStart { zeta: Law::Grid(&zeta), theta: Law::Grid(&theta) }, &coeffs, &constants, &invariant, &dc)?;
    let mut table = Table::new(&["t", "w2_mu", "w2_nu", "envelope"]);
    for k in 0..report.times.len() {
        table.push(vec![report.times[k].into(), report.w2_mu[k].into(), report.w2_nu[k].into(), report.bound[k].into()]);
    }
    let violations = report.violations.iter().map(|t| format!("measured W2^2 exceeds the envelope at t = {t}")).collect();
    let series = vec![Series::new("W2(mu)^2 + W2(nu)^2", &report.times, &report.measured()), Series::new("envelope", &report.times, &report.bound)];
    let json = json!({ "report": report, "invariant_horizon": invariant.horizon, "envelope_holds": report.envelope_holds() });
    Ok(Outcome { table, json, plot: Some((series, style("decay to the invariant law", "t", "squared distance", true))), violations })
}

/// Closed-form `u(t, x, μ)` for the linear families with constant potential and source.
fn fk_exact(p: (f64, f64, f64), terminal: &str, v: f64, f: f64, tau: f64, x: f64, m_t: f64) -> f64 {
    let (l, k, s) = p;
    let mean_x = (-l * tau).exp() * (x + m_t * (k * tau).exp_m1());
    let var_x = s * s * if l == 0.0 { tau } else { -(-2.0 * l * tau).exp_m1() / (2.0 * l) };
    let g = match terminal {
        "one" => 1.0,
        "x" => mean_x,
        "mean" => m_t * (-(l - k) * tau).exp(),
        _ => (-0.5 * var_x).exp() * mean_x.sin(),
    };
    let growth = (v * tau).exp();
    let accumulated = if v == 0.0 { tau } else { (v * tau).exp_m1() / v };
    growth * g + f * accumulated
}

fn feynman_kac(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let Some(Params::Fk(p)) = &cfg.params else { unreachable!("validated config") };
    let coeffs = coefficient_set(&cfg.coefficients);
    let lin = linear_params(&cfg.coefficients).expect("validated config");
    let terminal: Arc<mvlift::feynman_kac::TerminalFn> = match p.terminal.as_str() {
        "one" => Arc::new(|_: &[f64], _: &MeasureView<'_>| 1.0),
        "x" => Arc::new(|x: &[f64], _: &MeasureView<'_>| x[0]),
        "mean" => Arc::new(|_: &[f64], m: &MeasureView<'_>| m.mean()[0]),
        _ => Arc::new(|x: &[f64], _: &MeasureView<'_>| x[0].sin()),
    };
    let mut problem = FkProblem::new(p.terminal.clone(), coeffs, cfg.numerics.horizon, terminal);
    if p.potential != 0.0 {
        let v = p.potential;
        problem = problem.with_potential(Arc::new(move |_, _, _| v), v.abs());
    }
    if p.source != 0.0 {
        let f = p.source;
        problem = problem.with_source(Arc::new(move |_, _, _| f));
    }
    let fk = FkConfig {
        sim: SimConfig::new(p.replicas, cfg.numerics.dt, cfg.seed).with_execution(cfg.execution),
        flow: FlowBackend::Fpe { solver: solver(cfg) },
    };
    let mu = on_grid(&cfg.initial, grid(cfg)?)?;
    let batch = FkBatch::new(&problem, p.t, Law::Grid(&mu), &fk)?;
    let tau = cfg.numerics.horizon - p.t;
    let mut table = Table::new(&["x", "value", "stderr", "exact"]);
    let mut estimates = Vec::new();
    for &x in &p.points {
        let e = batch.estimate(&[x])?;
        let exact = fk_exact(lin, &p.terminal, p.potential, p.source, tau, x, mu.mean());
        table.push(vec![x.into(), e.value.into(), e.stderr.into(), exact.into()]);
        estimates.push(json!({ "x": x, "estimate": e, "exact": exact }));
    }
    let mut violations = Vec::new();
    let residual = match p.residual_probe {
        Some([t, x]) => {
            let r = pde_residual(&problem, t, x, &ProbeLaw::Grid(mu.clone()), FdSteps::new(p.dt_fd, p.dx_fd), &fk)?;
            let budget = r.budget(p.budget_constant);
            let passed = r.residual.abs() <= budget;
            if !passed {
                violations.push(format!("PDE residual {:.3e} at (t, x) = ({t}, {x}) exceeds budget {budget:.3e}", r.residual));
            }
            json!({ "t": t, "x": x, "result": r, "budget": budget, "passed": passed })
        }
        None => Value::Null,
    };
    let plot = (p.points.len() >= 2).then(|| {
        let xs = table.column("x").unwrap_or_default();
        let series = vec![Series::new("estimate", &xs, &table.column("value").unwrap_or_default()), Series::new("exact", &xs, &table.column("exact").unwrap_or_default())];
        (series, style("Feynman-Kac representation", "x", "u(t, x, mu)", false))
    });
    let json = json!({ "t": p.t, "horizon": cfg.numerics.horizon, "estimates": estimates, "residual_probe": residual });
    Ok(Outcome { table, json, plot, violations })
}

/// Least-squares slope of `ln err` against `ln eps`.
fn loglog_slope(eps: &[f64], err: &[f64]) -> f64 {
    let n = eps.len() as f64;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Errors below this are treated as exact (the difference quotient has no
/// truncation error to measure).
const EXACT_FLOOR: f64 = 1e-11;

fn random_test_fn<R: Rng>(r: &mut R) -> TestFn {
    match r.random_range(0..3) {
        0 => TestFn::sine(r.random_range(0.5..2.0), r.random_range(-1.0..1.0)),
        1 => TestFn::bump(r.random_range(-1.0..1.0), r.random_range(0.5..1.5)),
        _ => TestFn::monomial(r.random_range(2..4)),
    }
}

fn gradient_check(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let Some(Params::Gradient(p)) = &cfg.params else { unreachable!("validated config") };
    let mut r = rng::stream(rng::derive_seed(cfg.seed, GRADIENT_TAG), 0);
    let mu = EmpiricalMeasure::uniform(1, (0..16).map(|_| rng::normal(&mut r)).collect())?;
    let phi = |y: &[f64]| vec![y[0].sin() + 0.5];
    let mut table = Table::new(&["function", "label", "eps", "fd", "exact", "abs_error"]);
    let mut functions = Vec::new();
    let mut violations = Vec::new();
    for i in 0..p.n_functions {
        let f = if i % 2 == 0 {
            CylindricalFunction::new(OuterFn::product(), vec![random_test_fn(&mut r), random_test_fn(&mut r)])
        } else {
            CylindricalFunction::linear(random_test_fn(&mut r))
        };
        let label = format!("{}[{}]", f.outer().label(), f.inner().iter().map(|h| h.label()).collect::<Vec<_>>().join("; "));
        let exact = f.intrinsic_gradient(&mu).pair(&mu, phi);
        let errors: Vec<f64> = p
            .eps
            .iter()
            .map(|&eps| {
                let fd = l_derivative_fd(|m| f.evaluate(m), &mu, phi, eps);
                let err = (fd - exact).abs();
                table.push(vec![i.into(), label.clone().into(), eps.into(), fd.into(), exact.into(), err.into()]);
                err
            })
            .collect();
        let resolved = errors.iter().all(|e| *e > EXACT_FLOOR);
        let order = if resolved { loglog_slope(&p.eps, &errors) } else { f64::NAN };
        let passed = !resolved || order >= p.min_order;
        if !passed {
            violations.push(format!("function {i} ({label}): observed order {order:.3} < {}", p.min_order));
        }
        functions.push(json!({ "index": i, "label": label, "order": resolved.then_some(order), "passed": passed }));
    }
    let json = json!({ "functions": functions, "min_order": p.min_order, "eps": p.eps });
    Ok(Outcome { table, json, plot: None, violations })
}

fn hypotheses(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let Some(Params::Hypotheses(p)) = &cfg.params else { unreachable!("validated config") };
    let bx = (p.sample_box[0], p.sample_box[1]);
    let report = match &cfg.coefficients {
        Coefficients::Nldbm(spec) => validate_hypotheses(HypothesisTarget::Nldbm(&spec.params(1)), bx, p.n_samples, cfg.seed),
        Coefficients::MeanfieldOu { lambda0, kappa0, sigma0 } => {
            let (c, k) = meanfield_ou_coefficients(*lambda0, *kappa0, *sigma0);
            validate_hypotheses(HypothesisTarget::MonotoneCoefficients(&c, &k), bx, p.n_samples, cfg.seed)
        }
        Coefficients::Heat => unreachable!("validated config"),
    };
    let mut table = Table::new(&["check", "worst_margin", "samples", "passed"]);
    for c in &report.checks {
        table.push(vec![c.name.as_str().into(), c.worst_margin.into(), c.samples.into(), c.passed.into()]);
    }
    let violations = report.checks.iter().filter(|c| !c.passed).map(|c| format!("hypothesis `{}` fails (worst margin {:.3e})", c.name, c.worst_margin)).collect();
    Ok(Outcome { table, json: json!({ "report": report }), plot: None, violations })
}
