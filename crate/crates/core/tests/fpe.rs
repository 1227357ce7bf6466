mod common;

use mvlift::coefficients::{meanfield_ou_coefficients, nldbm_coefficients, BetaForm, CoefficientSet, DriftScalarForm, NldbmSpec};
use mvlift::cylindrical::{CylindricalFunction, OuterFn, TestFn};
use mvlift::fpe::{fpe_weak_residual, solve_frozen_fpe, solve_nonlinear_fpe, Record, Scheme, SolverConfig};
use mvlift::lift::measure_generator_consistency;
use mvlift::measure::{GridDensity1D, GridSpec, Mollifier};
use proptest::prelude::*;

fn nldbm() -> CoefficientSet {
    let spec = NldbmSpec {
        beta: BetaForm::LinearPlusArctan { slope: 2.0 },
        b_scalar: DriftScalarForm::Lorentzian { amplitude: 1.0 },
        c: 1.0,
        alpha: 0.5,
        gamma: None,
        gamma1: None,
    };
    nldbm_coefficients(&spec.params(1))
}

fn family(k: usize) -> CoefficientSet {
    match k {
        0 => CoefficientSet::heat(1),
        1 => meanfield_ou_coefficients(1.0, 0.5, 1.0).0,
        _ => nldbm(),
    }
}

/// Mixture of two Gaussians and a mollified Dirac.
fn initial() -> impl Strategy<Value = GridDensity1D> {
    (-2.0f64..2.0, 0.05f64..0.5, -2.0f64..2.0, 0.05f64..0.5, -2.0f64..2.0, 0.0f64..1.0).prop_map(|(m1, v1, m2, v2, x, w)| {
        let grid = GridSpec::centered(6.0, 0.04).unwrap();
        let a = GridDensity1D::gaussian(grid, m1, v1).unwrap();
        let b = GridDensity1D::gaussian(grid, m2, v2).unwrap();
        let d = GridDensity1D::dirac(grid, x, Mollifier::Linear).unwrap();
        let vals = (0..grid.n).map(|i| 0.4 * w * a.values()[i] + 0.4 * (1.0 - w) * b.values()[i] + 0.6 * d.values()[i]).collect();
        GridDensity1D::normalized(grid, vals).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solves_conserve_mass_and_stay_nonnegative(u0 in initial(), k in 0usize..3, explicit in any::<bool>()) {
        let coeffs = family(k);
        let cfg = if explicit { SolverConfig::new(2e-4, Scheme::Explicit) } else { SolverConfig::new(2e-3, Scheme::SemiImplicit) };
        let path = solve_nonlinear_fpe(&u0, &coeffs, 0.0, 0.2, &cfg).unwrap();
        let log = path.log();
        prop_assert!(log.max_step_mass_error <= 1e-12, "{log:?}");
        prop_assert!(log.min_value_before_clip >= -1e-13, "{log:?}");
        for s in path.states() {
            prop_assert!((s.mass() - 1.0).abs() <= 1e-12 * (1.0 + log.steps as f64));
            prop_assert!(s.values().iter().all(|&v| v >= 0.0));
        }
        let frozen = solve_frozen_fpe(&u0, &path, &coeffs, &cfg).unwrap();
        prop_assert!(frozen.log().max_step_mass_error <= 1e-12);
        prop_assert!(frozen.log().min_value_before_clip >= -1e-13);
    }

    #[test]
    fn constant_test_function_has_zero_residual(u0 in initial(), k in 0usize..3) {
        let coeffs = family(k);
        let path = solve_nonlinear_fpe(&u0, &coeffs, 0.0, 0.1, &SolverConfig::new(2e-3, Scheme::SemiImplicit)).unwrap();
        for (_, r) in fpe_weak_residual(&path, &coeffs, &TestFn::constant(1, 1.0)).unwrap() {
            prop_assert!(r.abs() <= 1e-12);
        }
    }
}

#[test]
fn sup_norm_stays_within_twice_the_initial_one() {
    let grid = GridSpec::centered(6.0, 0.02).unwrap();
    for k in 0..3 {
        for (m, v) in [(0.0, 0.1), (1.0, 0.3), (-0.5, 0.05)] {
            let u0 = GridDensity1D::gaussian(grid, m, v).unwrap();
            let path = solve_nonlinear_fpe(&u0, &family(k), 0.0, 1.0, &SolverConfig::new(1e-3, Scheme::SemiImplicit).recording(Record::Stride(10))).unwrap();
            let peak = path.states().iter().map(|s| s.sup_norm()).fold(0.0, f64::max);
            assert!(peak <= 2.0 * u0.sup_norm(), "family {k}, N({m},{v}): {peak} vs {}", u0.sup_norm());
        }
    }
}

#[test]
fn frozen_solve_reproduces_the_nonlinear_path() {
    let grid = GridSpec::centered(6.0, 0.02).unwrap();
    let dt = 1e-3;
    for k in 0..3 {
        let u0 = GridDensity1D::gaussian(grid, 0.4, 0.3).unwrap();
        let cfg = SolverConfig::new(dt, Scheme::SemiImplicit).recording(Record::Stride(50));
        let path = solve_nonlinear_fpe(&u0, &family(k), 0.0, 1.0, &cfg).unwrap();
        let frozen = solve_frozen_fpe(&u0, &path, &family(k), &cfg).unwrap();
        for (t, s) in frozen.times().iter().zip(frozen.states()) {
            let d = s.l1_distance(&path.state_at(*t).unwrap()).unwrap();
            assert!(d <= 10.0 * dt, "family {k}, t={t}: L1 {d}");
        }
    }
}

#[test]
fn heat_second_moment_grows_linearly() {
    let grid = GridSpec::centered(6.0, 1e-2).unwrap();
    let u0 = GridDensity1D::gaussian(grid, 0.0, 0.1).unwrap();
    let heat = CoefficientSet::heat(1);
    let path = solve_nonlinear_fpe(&u0, &heat, 0.0, 1.0, &SolverConfig::new(1e-4, Scheme::SemiImplicit).recording(Record::Stride(100))).unwrap();
    for (_, r) in fpe_weak_residual(&path, &heat, &TestFn::monomial(2)).unwrap() {
        assert!(r.abs() <= 1e-3, "{r}");
    }
    let exact = GridDensity1D::gaussian(grid, 0.0, 1.1).unwrap();
    assert!(path.last().l1_distance(&exact).unwrap() <= 2.0 * grid.dx + 10.0 * 1e-4);
}

#[test]
fn nldbm_weak_residual_converges_at_first_order() {
    let coeffs = nldbm();
    let steps = [(4e-3, 4e-2), (2e-3, 2e-2), (1e-3, 1e-2)];
    for h in [TestFn::sine(1.0, 0.3), TestFn::bump(0.2, 0.7), TestFn::monomial(2)] {
        let residuals: Vec<f64> = steps
            .iter()
            .map(|&(dt, dx)| {
                let grid = GridSpec::centered(6.0, dx).unwrap();
                let u0 = GridDensity1D::gaussian(grid, 0.3, 0.4).unwrap();
                let path = solve_nonlinear_fpe(&u0, &coeffs, 0.0, 0.5, &SolverConfig::new(dt, Scheme::SemiImplicit)).unwrap();
                fpe_weak_residual(&path, &coeffs, &h).unwrap().iter().map(|p| p.1.abs()).fold(0.0, f64::max)
            })
            .collect();
        let dts: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let slope = common::log_log_slope(&dts, &residuals);
        assert!(slope >= 0.8, "{}: {residuals:?} slope {slope}", h.label());
    }
}

#[test]
fn cylindrical_functionals_follow_the_measure_generator_along_dirac_paths() {
    let grid = GridSpec::centered(6.0, 1e-2).unwrap();
    let u0 = GridDensity1D::dirac(grid, 1.0, Mollifier::Hat3).unwrap();
    let prod = CylindricalFunction::new(OuterFn::product(), vec![TestFn::sine(1.0, 0.4), TestFn::bump(0.0, 1.0)]);
    let sine = CylindricalFunction::linear(TestFn::sine(1.0, 0.4));
    let cases = [
        (family(1), vec![CylindricalFunction::mean(1, 0), sine.clone(), prod.clone()]),
        (nldbm(), vec![CylindricalFunction::mean(1, 0), CylindricalFunction::linear(TestFn::monomial(2)), sine, prod]),
    ];
    for (coeffs, fs) in &cases {
        let path = solve_nonlinear_fpe(&u0, coeffs, 0.0, 0.2, &SolverConfig::new(1e-4, Scheme::SemiImplicit)).unwrap();
        for f in fs {
            // the mollified Dirac needs a few hundred steps to spread over many cells
            for c in measure_generator_consistency(f, &path, coeffs).unwrap().iter().filter(|c| c.t >= 0.05) {
                assert!(c.residual() <= 1e-2 * c.generator.abs(), "t={}: {} vs {}", c.t, c.derivative, c.generator);
            }
        }
    }
}
