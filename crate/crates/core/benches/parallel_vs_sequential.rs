//! Sequential against rayon-parallel execution for the hot loops: one
//! particle step, one SPDE step and a conditional-volatility KDE.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lpsv_core::exec::Execution;
use lpsv_core::initial::InitialLaw;
use lpsv_core::model::{CoefficientVector, VolMap, VolSpec};
use lpsv_core::particle::{gaussian_kde, ParticleSystem, SimOptions};
use lpsv_core::spde::{SolverConfig, SpdeSolver};

fn modes() -> Vec<(&'static str, Execution)> {
    let mut m = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    m.push(("parallel", Execution::Parallel));
    m
}

fn setup() -> (CoefficientVector, VolSpec, InitialLaw) {
    let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.5);
    let spec = VolSpec::rational(VolMap::ClampAbs { min: 0.1, max: 0.5 }).unwrap();
    let law = InitialLaw::RayleighGaussian { x_scale: 0.5, y_mean: 0.2, y_sd: 0.1 };
    (c, spec, law)
}

fn particle_step(cr: &mut Criterion) {
    let (c, spec, law) = setup();
    let init = law.sample(100_000, 1);
    let mut group = cr.benchmark_group("particle_step_100k");
    for (name, execution) in modes() {
        let opts = SimOptions { execution, ..Default::default() };
        let mut sys = ParticleSystem::new(&[c], &spec, &init, 2, opts).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sys.advance(0.01, -0.02, 1e-3).unwrap())
        });
    }
    group.finish();
}

fn spde_step(cr: &mut Criterion) {
    let (c, spec, law) = setup();
    let cfg = SolverConfig::fitted(&c, &spec, 1.0, 0.01, 0.02, 4.0, -2.2, 2.6, 0.5).unwrap();
    let mut group = cr.benchmark_group("spde_step_400x240");
    for (name, execution) in modes() {
        let mut solver = SpdeSolver::new(cfg, &c, &spec).unwrap().with_execution(execution);
        let mut grid = solver.init(|x, y| law.density(x, y, cfg.dy)).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| solver.advance(&mut grid, 1e-3, -1e-3).unwrap())
        });
    }
    group.finish();
}

fn kde(cr: &mut Criterion) {
    let samples: Vec<f64> = InitialLaw::RayleighGaussian { x_scale: 1.0, y_mean: 0.0, y_sd: 1.0 }
        .sample(50_000, 3)
        .into_iter()
        .map(|p| p.1)
        .collect();
    let mut group = cr.benchmark_group("kde_50k");
    group.sample_size(10);
    for (name, execution) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gaussian_kde(&samples, 0.05, execution).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, particle_step, spde_step, kde);
criterion_main!(benches);
