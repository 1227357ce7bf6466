mod common;

use mvlift::measure::io::{read_measure_csv, write_measure_csv};
use mvlift::measure::{
    kde_density, optimal_plan_1d, sinkhorn, wasserstein2, BinnedKde, EmpiricalMeasure, GridDensity1D, GridSpec, SinkhornConfig, W2Method,
};
use mvlift::Execution;
use proptest::prelude::*;

use common::{lp_w2_squared, permutation_w2_squared};

fn cloud(max: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-5.0f64..5.0, 0.01f64..1.0), 1..=max)
        .prop_map(|atoms| EmpiricalMeasure::normalized(1, atoms.iter().map(|a| a.0).collect(), atoms.iter().map(|a| a.1).collect()).unwrap())
}

fn w2(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    wasserstein2(a, b, W2Method::Exact1d).unwrap()
}

proptest! {
    #[test]
    fn quantile_coupling_is_optimal(a in cloud(6), b in cloud(6)) {
        let exact = w2(&a, &b);
        prop_assert!((exact * exact - lp_w2_squared(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn uniform_clouds_match_best_permutation(x in prop::collection::vec(-5.0f64..5.0, 1..=6), shift in -2.0f64..2.0) {
        let y: Vec<f64> = x.iter().rev().map(|v| v * 0.7 + shift).collect();
        let exact = w2(&EmpiricalMeasure::uniform(1, x.clone()).unwrap(), &EmpiricalMeasure::uniform(1, y.clone()).unwrap());
        prop_assert!((exact * exact - permutation_w2_squared(&x, &y)).abs() <= 1e-9);
    }

    #[test]
    fn w2_is_a_metric(a in cloud(12), b in cloud(12), c in cloud(12)) {
        prop_assert!((w2(&a, &b) - w2(&b, &a)).abs() <= 1e-9);
        prop_assert!(w2(&a, &c) <= w2(&a, &b) + w2(&b, &c) + 1e-9);
        prop_assert!(w2(&a, &a) <= 1e-9);
    }

    #[test]
    fn monotone_plan_is_a_coupling_with_the_exact_cost(a in cloud(8), b in cloud(8)) {
        let plan = optimal_plan_1d(&a, &b).unwrap();
        prop_assert!(plan.marginal_error() <= 1e-12);
        prop_assert!((plan.cost() - w2(&a, &b).powi(2)).abs() <= 1e-9);
    }

    #[test]
    fn sinkhorn_never_undercuts_the_exact_cost(a in cloud(6), b in cloud(6)) {
        let cfg = SinkhornConfig { epsilon: Some(1e-2), tolerance: 1e-10, max_iterations: 50_000, execution: Execution::Sequential };
        if let Ok(out) = sinkhorn(&a, &b, &cfg) {
            let exact = w2(&a, &b).powi(2);
            // squared costs are at most 100 on [-5, 5]; marginal slack can lower the cost by that much per unit
            let slack = 100.0 * (a.len() + b.len()) as f64 * out.plan.marginal_error();
            prop_assert!(out.plan.cost() >= exact - slack - 1e-9);
        }
    }

    #[test]
    fn pushforward_keeps_weights(a in cloud(10), t in -1.0f64..1.0) {
        let moved = a.pushforward(|x| vec![x[0].sin() + 0.3], t);
        prop_assert_eq!(moved.weights(), a.weights());
        prop_assert_eq!(moved.weights().iter().sum::<f64>(), a.weights().iter().sum::<f64>());
        prop_assert_eq!(moved.len(), a.len());
    }

    #[test]
    fn translation_moves_w2_by_the_shift(a in cloud(10), c in -3.0f64..3.0) {
        let moved = a.pushforward(|_| vec![1.0], c);
        prop_assert!((w2(&a, &moved) - c.abs()).abs() <= 1e-9);
    }

    #[test]
    fn csv_roundtrip_is_bitwise(a in cloud(10)) {
        let mut buf = Vec::new();
        write_measure_csv(&a, &mut buf).unwrap();
        let back = read_measure_csv(&buf[..]).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn deposit_keeps_mass_and_mean(a in cloud(20)) {
        let grid = GridSpec::centered(6.0, 0.05).unwrap();
        let rho = GridDensity1D::deposit(grid, &a).unwrap();
        prop_assert!((rho.mass() - 1.0).abs() <= 1e-12);
        let mean: f64 = a.integrate(|x| x[0]);
        prop_assert!((rho.mean() - mean).abs() <= 1e-9);
    }

    #[test]
    fn kde_is_a_probability_density(a in cloud(30), h in 0.1f64..0.8) {
        let grid = GridSpec::centered(12.0, 0.02).unwrap();
        let rho = kde_density(&a, &grid, h).unwrap();
        prop_assert!((rho.mass() - 1.0).abs() <= 1e-12);
        prop_assert!(rho.values().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn binned_kde_matches_parallel_and_sequential() {
    let grid = GridSpec::centered(6.0, 0.01).unwrap();
    let pts: Vec<f64> = (0..5000).map(|i| ((i as f64) * 0.618).sin() * 2.0).collect();
    let kde = BinnedKde::new(grid, 0.2).unwrap();
    let a = kde.estimate(&pts, Execution::Parallel).unwrap();
    let b = kde.estimate(&pts, Execution::Sequential).unwrap();
    assert_eq!(a, b);
}
