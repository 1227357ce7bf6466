mod common;

use std::sync::Arc;

use mvlift::coefficients::meanfield_ou_coefficients;
use mvlift::cylindrical::{CylindricalFunction, OuterFn, TestFn};
use mvlift::feynman_kac::{
    default_steps, fk_evaluate, l_derivative_fd, pde_residual, tower_check, FdSteps, FkBatch, FkConfig, FkProblem, FlowBackend, ProbeLaw,
};
use mvlift::fpe::{Scheme, SolverConfig};
use mvlift::measure::{EmpiricalMeasure, GridDensity1D, GridSpec, Law};
use mvlift::particle::SimConfig;
use mvlift::Error;
use proptest::prelude::*;

fn cfg(r: usize, dt: f64, seed: u64) -> FkConfig {
    FkConfig { sim: SimConfig::new(r, dt, seed), flow: FlowBackend::Fpe { solver: SolverConfig::new(dt, Scheme::SemiImplicit) } }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn probe_law() -> GridDensity1D {
    GridDensity1D::gaussian(GridSpec::centered(6.0, 1e-2).unwrap(), 0.7, 0.3).unwrap()
}

/// `log₂` of the ratio of successive differences of a sequence computed at steps `h, h/2, h/4, …`.
fn observed_orders(d: &[f64]) -> Vec<f64> {
    d.windows(3).map(|w| ((w[0] - w[1]) / (w[1] - w[2])).abs().log2()).collect()
}

#[test]
fn crn_difference_quotients_converge_at_second_order() {
    // decoupled OU with Φ = sin: u = sin(x e^{−τ}) e^{−V/2}, V = ½(1 − e^{−2τ})
    let (ou, _) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
    let p = FkProblem::new("sin", ou, 1.0, Arc::new(|y, _| y[0].sin()));
    let mu = probe_law();
    let c = cfg(4000, 1e-3, 5);
    let batch = FkBatch::new(&p, 0.0, Law::Grid(&mu), &c).unwrap();
    let x = 0.4;
    let at = |y: f64| batch.samples(&[y]).unwrap();
    let hs = [0.4, 0.2, 0.1, 0.05];
    let first: Vec<f64> = hs.iter().map(|&h| (mean(&at(x + h)) - mean(&at(x - h))) / (2.0 * h)).collect();
    let second: Vec<f64> = hs.iter().map(|&h| (mean(&at(x + h)) - 2.0 * mean(&at(x)) + mean(&at(x - h))) / (h * h)).collect();
    let n = default_steps(0.0, 1.0, 1e-3);
    let time: Vec<f64> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&h| {
            let later = FkBatch::with_steps(&p, h, Law::Grid(&mu), &c, n).unwrap().samples(&[x]).unwrap();
            let earlier = FkBatch::with_steps(&p, -h, Law::Grid(&mu), &c, n).unwrap().samples(&[x]).unwrap();
            (mean(&later) - mean(&earlier)) / (2.0 * h)
        })
        .collect();
    for (label, d) in [("d/dx", &first), ("d2/dx2", &second), ("d/dt", &time)] {
        for order in observed_orders(d) {
            assert!(order >= 1.8, "{label}: {d:?}");
        }
    }

    let (e, v) = ((-1.0f64).exp(), 0.5 * (1.0 - (-2.0f64).exp()));
    let exact = e * (x * e).cos() * (-v / 2.0).exp();
    let h = hs[3];
    let quotients: Vec<f64> = at(x + h).iter().zip(at(x - h)).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let se = common::stderr(&quotients);
    assert!((first[3] - exact).abs() <= 3.0 * se + h * h + c.sim.dt, "{} vs {exact} (se {se})", first[3]);
}

#[test]
fn pde_residual_stays_within_its_budget() {
    let (ou, _) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
    let (mf, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let mu = ProbeLaw::Grid(probe_law());
    for p in [
        FkProblem::new("c", ou.clone(), 1.0, Arc::new(|_, _| 1.0)).with_potential(Arc::new(|_, _, _| 0.8), 1.0),
        FkProblem::new("x", ou, 1.0, Arc::new(|y, _| y[0])),
        FkProblem::new("m", mf, 1.0, Arc::new(|_, v| v.mean()[0])),
    ] {
        let r = pde_residual(&p, 0.4, 0.5, &mu, FdSteps::new(1e-2, 5e-2), &cfg(4000, 1e-3, 9)).unwrap();
        assert!(r.residual.abs() <= r.budget(1.0), "{}: {:e} > {:e} ({:?})", p.label, r.residual, r.budget(1.0), r.terms);
    }
}

#[test]
fn tiny_steps_are_refused() {
    let (ou, _) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
    let p = FkProblem::new("sin", ou, 1.0, Arc::new(|y, _| y[0].sin() + y[0] * y[0]));
    let steps = FdSteps { noise_cap: 1e-3, ..FdSteps::new(1e-4, 1e-4) };
    let r = pde_residual(&p, 0.4, 0.5, &ProbeLaw::Grid(probe_law()), steps, &cfg(200, 1e-2, 9));
    assert!(matches!(r, Err(Error::FiniteDifferenceStep(_))), "{r:?}");
}

#[test]
fn unbounded_potentials_abort_with_location() {
    let (ou, _) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
    let p = FkProblem::new("v", ou, 1.0, Arc::new(|_, _| 1.0)).with_potential(Arc::new(|_, x, _| x[0] * x[0]), 4.0);
    match fk_evaluate(&p, 0.0, &[1.5], Law::Grid(&probe_law()), &cfg(500, 1e-2, 3)) {
        Err(Error::UnboundedPotential { value, bound, .. }) => assert!(value.abs() > bound),
        other => panic!("{other:?}"),
    }
}

#[test]
fn tower_property_through_an_intermediate_time() {
    let (mf, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let probes: Vec<f64> = (0..41).map(|k| -4.0 + 0.2 * k as f64).collect();
    let p = FkProblem::new("xm", mf, 1.0, Arc::new(|y, v| y[0] * v.mean()[0] + 0.5 * y[0].sin()));
    for (t, r, x) in [(0.2, 0.6, -0.3), (0.0, 0.3, 1.1)] {
        let rep = tower_check(&p, t, r, x, &ProbeLaw::Grid(probe_law()), &probes, &cfg(4000, 1e-3, 41)).unwrap();
        assert!(rep.passed, "t={t} r={r}: {} vs {} (tol {})", rep.direct.value, rep.composed.value, rep.tolerance);
    }
}

fn test_fn() -> impl Strategy<Value = TestFn> {
    prop_oneof![
        (0.5f64..2.0, -3.0f64..3.0).prop_map(|(a, b)| TestFn::sine(a, b)),
        (-1.0f64..1.0, 0.5f64..1.5).prop_map(|(c, s)| TestFn::bump(c, s)),
        (1i32..4).prop_map(TestFn::monomial),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pushforward_differences_reproduce_intrinsic_gradient_pairings(
        h1 in test_fn(),
        h2 in test_fn(),
        atoms in prop::collection::vec((-2.0f64..2.0, 0.1f64..1.0), 1..12),
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
    ) {
        let f = CylindricalFunction::new(OuterFn::product(), vec![h1, h2]);
        let mu = EmpiricalMeasure::normalized(1, atoms.iter().map(|p| p.0).collect(), atoms.iter().map(|p| p.1).collect()).unwrap();
        let phi = move |x: &[f64]| vec![a * x[0].cos() + b];
        let exact = f.intrinsic_gradient(&mu).pair(&mu, phi);
        let fd = l_derivative_fd(|m| f.evaluate(m), &mu, phi, 1e-4);
        prop_assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()), "{fd} vs {exact}");
    }
}
