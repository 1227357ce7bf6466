use mvlift::coefficients::{
    meanfield_ou_coefficients, nldbm_coefficients, validate_hypotheses, BetaForm, DriftScalarForm, HypothesisTarget, MeasureView, NldbmSpec, Side,
};
use mvlift::measure::{EmpiricalMeasure, GridDensity1D, GridSpec};

use proptest::prelude::*;

fn spec(slope: f64) -> NldbmSpec {
    NldbmSpec {
        beta: BetaForm::LinearPlusArctan { slope },
        b_scalar: DriftScalarForm::Lorentzian { amplitude: 1.0 },
        c: 1.0,
        alpha: 0.5,
        gamma: None,
        gamma1: None,
    }
}

proptest! {
    #[test]
    fn nemytskii_sees_only_the_local_density(i in 550usize..650, m in -1.0f64..1.0, v in 0.1f64..0.3) {
        let grid = GridSpec::centered(6.0, 0.01).unwrap();
        let x = grid.center(i);
        let c = nldbm_coefficients(&spec(2.0).params(1));
        let a = GridDensity1D::gaussian(grid, m, v).unwrap();
        // average a with its reflection about x: equal density at x, different law
        let av = a.values();
        let vals: Vec<f64> = (0..grid.n).map(|j| {
            let r = (2 * i).checked_sub(j).filter(|&r| r < grid.n).map_or(0.0, |r| av[r]);
            0.5 * (av[j] + r)
        }).collect();
        let b = GridDensity1D::new(grid, vals).unwrap();
        prop_assume!(b.value_at(x) == a.value_at(x));
        prop_assert!(b.l1_distance(&a).unwrap() > 1e-3 || (m - x).abs() < 1e-2);
        let (va, vb) = (MeasureView::of_grid(&a), MeasureView::of_grid(&b));
        prop_assert_eq!(c.drift(Side::Nonlinear, 0.0, &[x], &va).unwrap(), c.drift(Side::Nonlinear, 0.0, &[x], &vb).unwrap());
        prop_assert_eq!(c.diffusion(Side::Nonlinear, 0.0, &[x], &va).unwrap(), c.diffusion(Side::Nonlinear, 0.0, &[x], &vb).unwrap());
    }

    #[test]
    fn meanfield_ou_is_affine(l0 in 0.1f64..3.0, k0 in -2.0f64..2.0, s0 in 0.1f64..2.0, x0 in -3.0f64..3.0, m0 in -2.0f64..2.0) {
        let (c, _) = meanfield_ou_coefficients(l0, k0, s0);
        let drift = |x: f64, m: f64| {
            let mu = EmpiricalMeasure::dirac(&[m]);
            c.drift(Side::Nonlinear, 0.0, &[x], &MeasureView::of_cloud(&mu)).unwrap()[0]
        };
        // exact interpolation through three collinear points in each argument
        {
            let (a, b) = (x0 - 1.0, x0 + 2.0);
            let mid = drift((a + b) / 2.0, m0);
            prop_assert!((mid - 0.5 * (drift(a, m0) + drift(b, m0))).abs() <= 1e-12 * (1.0 + mid.abs()));
        }
        let mid = drift(x0, m0 + 0.5);
        prop_assert!((mid - 0.5 * (drift(x0, m0) + drift(x0, m0 + 1.0))).abs() <= 1e-12 * (1.0 + mid.abs()));
        prop_assert!((drift(x0, m0) - (-l0 * x0 + k0 * m0)).abs() <= 1e-12 * (1.0 + x0.abs() + m0.abs()));
    }

    #[test]
    fn nldbm_diffusion_is_elliptic(slope in 0.5f64..3.0, x in -3.0f64..3.0, m in -1.0f64..1.0, v in 0.05f64..2.0) {
        let grid = GridSpec::centered(8.0, 0.02).unwrap();
        let mu = GridDensity1D::gaussian(grid, m, v).unwrap();
        let p = spec(slope).params(1);
        let c = nldbm_coefficients(&p);
        let a = c.diffusion_matrix(Side::Nonlinear, 0.0, &[x], &MeasureView::of_grid(&mu)).unwrap();
        prop_assert!(a[0] >= 0.0);
        prop_assert!(a[0] >= p.gamma - 1e-12);
        prop_assert!(a[0] <= p.gamma1 + 1e-12);
    }
}

#[test]
fn meanfield_ou_constants_pass_and_square_beta_fails() {
    let (c, k) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    assert!(validate_hypotheses(HypothesisTarget::MonotoneCoefficients(&c, &k), (-3.0, 3.0), 200, 1).passed);
    let good = spec(2.0).params(1);
    assert!(validate_hypotheses(HypothesisTarget::Nldbm(&good), (-3.0, 3.0), 200, 1).passed);
    let bad = NldbmSpec { beta: BetaForm::Square, ..spec(2.0) }.params(1);
    assert!(!validate_hypotheses(HypothesisTarget::Nldbm(&bad), (-3.0, 3.0), 200, 1).passed);
}
