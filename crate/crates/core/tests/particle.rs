mod common;

use mvlift::coefficients::meanfield_ou_coefficients;
use mvlift::fpe::{solve_frozen_fpe, solve_nonlinear_fpe, Record, Scheme, SolverConfig};
use mvlift::measure::gaussian::{normal_cdf, normal_quantile, w2_cloud_to_gaussian};
use mvlift::measure::{EmpiricalMeasure, GridDensity1D, GridSpec};
use mvlift::particle::{marginal, simulate_frozen, simulate_mckean_vlasov, SimConfig};
use mvlift::Execution;
use proptest::prelude::*;

/// Stratified sample of N(m, v).
fn normal_cloud(n: usize, m: f64, v: f64) -> EmpiricalMeasure {
    EmpiricalMeasure::uniform(1, (0..n).map(|i| m + v.sqrt() * normal_quantile((i as f64 + 0.5) / n as f64)).collect()).unwrap()
}

/// Exact W1 between a cloud and a piecewise-constant density, from the CDFs.
fn w1_cloud_grid(cloud: &EmpiricalMeasure, rho: &GridDensity1D) -> f64 {
    let g = rho.grid();
    let mut xs = cloud.points().to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let sub = 20;
    let h = g.dx / sub as f64;
    let (mut total, mut f_grid, mut j) = (0.0, 0.0, 0);
    for i in 0..g.n {
        for k in 0..sub {
            let x = g.x_min + i as f64 * g.dx + (k as f64 + 0.5) * h;
            while j < xs.len() && xs[j] <= x {
                j += 1;
            }
            let f = f_grid + rho.values()[i] * (k as f64 + 0.5) * h;
            total += (f - j as f64 / n).abs() * h;
        }
        f_grid += rho.values()[i] * g.dx;
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permuting_particles_permutes_trajectories(seed in any::<u64>(), shift in 1usize..40) {
        let (c, _) = meanfield_ou_coefficients(1.0, 0.5, 0.8);
        let n = 40;
        let xs: Vec<f64> = (0..n).map(|i| ((i * 17 + seed as usize % 7) % n) as f64 / 8.0 - 2.5).collect();
        let perm: Vec<usize> = (0..n).map(|i| (i * 3 + shift) % n).collect();
        let ys: Vec<f64> = perm.iter().map(|&p| xs[p]).collect();
        let cfg = SimConfig::new(n, 1e-2, seed);
        let mut cfg_p = cfg.clone();
        cfg_p.stream_ids = Some(perm.iter().map(|&p| p as u64).collect());
        let a = simulate_mckean_vlasov(&EmpiricalMeasure::uniform(1, xs).unwrap(), &c, 0.0, 0.2, &cfg).unwrap();
        let b = simulate_mckean_vlasov(&EmpiricalMeasure::uniform(1, ys).unwrap(), &c, 0.0, 0.2, &cfg_p).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(b.path(i), a.path(p));
        }
    }

    #[test]
    fn same_seed_same_trajectories(seed in any::<u64>()) {
        let (c, _) = meanfield_ou_coefficients(1.0, 0.3, 1.0);
        let theta0 = normal_cloud(200, 0.5, 0.2);
        let cfg = SimConfig::new(200, 1e-2, seed);
        let a = simulate_mckean_vlasov(&theta0, &c, 0.0, 0.3, &cfg).unwrap();
        let b = simulate_mckean_vlasov(&theta0, &c, 0.0, 0.3, &cfg.clone().with_execution(Execution::Sequential)).unwrap();
        prop_assert_eq!(&a, &b);
        let other = simulate_mckean_vlasov(&theta0, &c, 0.0, 0.3, &SimConfig::new(200, 1e-2, seed ^ 1)).unwrap();
        prop_assert_ne!(a.path(0), other.path(0));
    }
}

#[test]
fn euler_mean_error_is_first_order() {
    // m' = (κ - λ) m; far from equilibrium the Euler bias dominates sampling noise
    let (c, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let (m0, n, t) = (1000.0, 50_000, 1.0);
    let exact = m0 * (-0.5f64 * t).exp();
    let dts = [4e-3, 2e-3, 1e-3];
    let errors: Vec<f64> = dts
        .iter()
        .map(|&dt| {
            let cfg = SimConfig::new(n, dt, 21).recording(Record::At(vec![t]));
            let ens = simulate_mckean_vlasov(&EmpiricalMeasure::dirac(&[m0]), &c, 0.0, t, &cfg).unwrap();
            let xs = marginal(&ens, t).unwrap();
            (xs.points().iter().sum::<f64>() / n as f64 - exact).abs()
        })
        .collect();
    let slope = common::log_log_slope(&dts, &errors);
    assert!(slope >= 0.8, "{errors:?} slope {slope}");
}

#[test]
fn frozen_ou_replicas_have_the_ou_autocorrelation() {
    let (lambda, dt, n) = (1.0, 1e-2, 20_000);
    let (c, _) = meanfield_ou_coefficients(lambda, 0.5, 1.0);
    let grid = GridSpec::centered(6.0, 2e-2).unwrap();
    let stationary = GridDensity1D::gaussian(grid, 0.0, 0.5).unwrap();
    let flow = solve_nonlinear_fpe(&stationary, &c, 0.0, 3.0, &SolverConfig::new(dt, Scheme::SemiImplicit).recording(Record::Stride(10))).unwrap();
    let cfg = SimConfig::new(n, dt, 8).recording(Record::At(vec![3.0 - dt, 3.0]));
    let ens = simulate_frozen(&normal_cloud(n, 0.0, 0.5), &flow, &c.companion(), 0.0, 3.0, &cfg).unwrap();
    let k = ens.times().len() - 1;
    let (a, b) = (ens.positions_at(k - 1), ens.positions_at(k));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let rho = cov / (va * vb).sqrt();
    let target = (-dt * lambda).exp();
    let stderr = (1.0 - target * target) / (n as f64).sqrt();
    assert!((rho - target).abs() <= 3.0 * stderr, "{rho} vs {target} (se {stderr})");
}

#[test]
fn frozen_marginals_solve_the_frozen_equation() {
    let (c, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let grid = GridSpec::centered(6.0, 1e-2).unwrap();
    let dt = 1e-3;
    let cfg_fpe = SolverConfig::new(dt, Scheme::SemiImplicit).recording(Record::At(vec![0.5, 1.0]));
    let flow = solve_nonlinear_fpe(&GridDensity1D::gaussian(grid, 0.8, 0.3).unwrap(), &c, 0.0, 1.0, &cfg_fpe).unwrap();
    let nu0 = GridDensity1D::gaussian(grid, -0.5, 0.2).unwrap();
    let nu = solve_frozen_fpe(&nu0, &flow, &c.companion(), &cfg_fpe).unwrap();
    for n in [2_000, 20_000] {
        let cfg = SimConfig::new(n, dt, 13).recording(Record::At(vec![0.5, 1.0]));
        let ens = simulate_frozen(&normal_cloud(n, -0.5, 0.2), &flow, &c.companion(), 0.0, 1.0, &cfg).unwrap();
        for t in [0.5, 1.0] {
            // bounded-Lipschitz distance is dominated by W1
            let d = w1_cloud_grid(&marginal(&ens, t).unwrap(), &nu.state_at(t).unwrap());
            assert!(d <= 3.0 * (1.0 / (n as f64).sqrt() + dt), "N={n}, t={t}: {d}");
        }
    }
}

#[test]
fn decoupled_ou_marginal_is_close_to_the_gaussian() {
    let (c, _) = meanfield_ou_coefficients(1.0, 0.0, 1.0);
    for (n, dt) in [(5_000, 1e-2), (20_000, 2e-3)] {
        let cfg = SimConfig::new(n, dt, 5).recording(Record::At(vec![1.0]));
        let ens = simulate_mckean_vlasov(&EmpiricalMeasure::dirac(&[0.0]), &c, 0.0, 1.0, &cfg).unwrap();
        let w2 = w2_cloud_to_gaussian(&marginal(&ens, 1.0).unwrap(), 0.0, 0.5 * (1.0 - (-2.0f64).exp()));
        assert!(w2 <= 5.0 / (n as f64).sqrt() + 5.0 * dt, "N={n}: {w2}");
    }
}

#[test]
fn w1_oracle_agrees_with_gaussian_cdf() {
    let grid = GridSpec::centered(6.0, 1e-2).unwrap();
    let rho = GridDensity1D::gaussian(grid, 0.0, 1.0).unwrap();
    let at_zero = EmpiricalMeasure::dirac(&[0.0]);
    // W1(δ0, N(0,1)) = E|Z|
    assert!((w1_cloud_grid(&at_zero, &rho) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-4);
    assert!(normal_cdf(0.0) == 0.5);
}
