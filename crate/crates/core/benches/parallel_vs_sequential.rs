use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mvlift::coefficients::meanfield_ou_coefficients;
use mvlift::feynman_kac::{fk_evaluate, FkConfig, FkProblem, FlowBackend};
use mvlift::fpe::{Record, Scheme, SolverConfig};
use mvlift::measure::{BinnedKde, EmpiricalMeasure, GridDensity1D, GridSpec, Law};
use mvlift::particle::{simulate_mckean_vlasov, SimConfig};
use mvlift::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn particles(c: &mut Criterion) {
    let (coeffs, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let theta0 = EmpiricalMeasure::dirac(&[1.0]);
    let mut group = c.benchmark_group("particle_system");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = SimConfig::new(20_000, 1e-2, 1).recording(Record::At(vec![])).with_execution(exec);
        group.bench_function(BenchmarkId::new(name, 20_000), |b| b.iter(|| simulate_mckean_vlasov(&theta0, &coeffs, 0.0, 0.5, &cfg).unwrap()));
    }
    group.finish();
}

fn kde(c: &mut Criterion) {
    let grid = GridSpec::centered(6.0, 1e-2).unwrap();
    let pts: Vec<f64> = (0..100_000).map(|i| 2.0 * ((i as f64) * 0.618_034).sin()).collect();
    let kde = BinnedKde::new(grid, 0.1).unwrap();
    let mut group = c.benchmark_group("binned_kde");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, pts.len()), |b| b.iter(|| kde.estimate(&pts, exec).unwrap()));
    }
    group.finish();
}

fn feynman_kac(c: &mut Criterion) {
    let (coeffs, _) = meanfield_ou_coefficients(1.0, 0.5, 1.0);
    let mu = GridDensity1D::gaussian(GridSpec::centered(6.0, 2e-2).unwrap(), 0.5, 0.3).unwrap();
    let p = FkProblem::new("bench", coeffs, 1.0, Arc::new(|x, v| x[0] * v.mean()[0]));
    let mut group = c.benchmark_group("feynman_kac");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = FkConfig {
            sim: SimConfig::new(5_000, 1e-2, 2).with_execution(exec),
            flow: FlowBackend::Fpe { solver: SolverConfig::new(1e-2, Scheme::SemiImplicit) },
        };
        group.bench_function(BenchmarkId::new(name, 5_000), |b| b.iter(|| fk_evaluate(&p, 0.0, &[0.3], Law::Grid(&mu), &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, particles, kde, feynman_kac);
criterion_main!(benches);
