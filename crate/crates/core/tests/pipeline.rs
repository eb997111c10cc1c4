//! Cross-module runs: noise, particles, solver and grid files together.

use lpsv_core::exec::Execution;
use lpsv_core::initial::InitialLaw;
use lpsv_core::model::{CoefficientVector, VolMap, VolSpec};
use lpsv_core::particle::{generate_common_noise, simulate_portfolio, Absorption, SimOptions};
use lpsv_core::spde::{io, SolverConfig, SpdeSolver};

fn setup() -> (CoefficientVector, VolSpec, InitialLaw) {
    let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.5);
    let spec = VolSpec::ornstein_uhlenbeck(1.0, 0.3)
        .unwrap()
        .with_h(VolMap::ClampAbs { min: 0.1, max: 0.5 })
        .unwrap();
    (c, spec, InitialLaw::RayleighGaussian { x_scale: 0.5, y_mean: 0.2, y_sd: 0.1 })
}

fn cfg(c: &CoefficientVector, spec: &VolSpec) -> SolverConfig {
    SolverConfig::fitted(c, spec, 0.2, 0.05, 0.1, 3.0, -2.0, 2.4, 0.5).unwrap()
}

#[test]
fn solver_mass_decreases_and_tracks_particles() {
    let (c, spec, law) = setup();
    let cfg = cfg(&c, &spec);
    let mut solver = SpdeSolver::new(cfg, &c, &spec).unwrap();
    let g = solver.init(|x, y| law.density(x, y, cfg.dy)).unwrap();
    let n = (0.2 / cfg.dt).round() as usize;
    let noise = generate_common_noise(cfg.dt, n, c.rho3, 3).unwrap();
    let out = solver.solve(&g, &noise, 0).unwrap();

    assert!((out.mass[0] - 1.0).abs() < 1e-12);
    // Centred stochastic transport leaks O(dx) mass through the first
    // interior column, so the pathwise check allows a fraction of a step.
    assert!(out.mass.windows(2).all(|w| w[1] <= w[0] + cfg.dt));
    let last = out.snapshots.last().unwrap();
    assert!((last.survival_mass().mass - out.mass[n]).abs() < 1e-12);

    let init = law.sample(20_000, 4);
    let opts = SimOptions { absorption: Absorption::BrownianBridge, ..Default::default() };
    let run = simulate_portfolio(&[c], &spec, &init, &noise, 5, opts).unwrap();
    assert_eq!(run.times.len(), out.times.len());
    assert!((run.loss[n] - out.loss()[n]).abs() < 0.02, "{} vs {}", run.loss[n], out.loss()[n]);
}

#[test]
fn final_grid_survives_both_file_formats() {
    let (c, spec, law) = setup();
    let cfg = cfg(&c, &spec);
    let mut solver = SpdeSolver::new(cfg, &c, &spec).unwrap();
    let g = solver.init(|x, y| law.density(x, y, cfg.dy)).unwrap();
    let noise = generate_common_noise(cfg.dt, 20, c.rho3, 8).unwrap();
    let last = solver.solve(&g, &noise, 0).unwrap().snapshots.pop().unwrap();

    let mut bin = Vec::new();
    io::write_binary(&last, &mut bin).unwrap();
    assert_eq!(io::read_binary(bin.as_slice()).unwrap(), last);

    let mut csv = Vec::new();
    io::write_csv(&last, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 1 + last.nx * last.ny);
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_runs_agree_bitwise() {
    let (c, spec, law) = setup();
    let cfg = cfg(&c, &spec);
    let noise = generate_common_noise(cfg.dt, 40, c.rho3, 12).unwrap();
    let solve = |exec| {
        let mut s = SpdeSolver::new(cfg, &c, &spec).unwrap().with_execution(exec);
        let g = s.init(|x, y| law.density(x, y, cfg.dy)).unwrap();
        s.solve(&g, &noise, 10).unwrap()
    };
    assert_eq!(solve(Execution::Sequential), solve(Execution::Parallel));

    let init = law.sample(5_000, 13);
    let simulate = |execution| {
        let opts = SimOptions { execution, record_every: 10, ..Default::default() };
        simulate_portfolio(&[c], &spec, &init, &noise, 14, opts).unwrap()
    };
    let (a, b) = (simulate(Execution::Sequential), simulate(Execution::Parallel));
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.states.len(), b.states.len());
    for (sa, sb) in a.states.iter().zip(&b.states) {
        assert_eq!(sa.x, sb.x);
        assert_eq!(sa.sigma, sb.sigma);
    }
}
