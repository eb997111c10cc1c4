//! Task execution for a validated scenario.

use std::path::PathBuf;

use lpsv_core::exec::Execution;
use lpsv_core::lamperti::LampertiMap;
use lpsv_core::model::{CoefficientVector, VolSpec};
use lpsv_core::particle::{
    conditional_vol_samples, gaussian_kde, generate_common_noise, silverman_bandwidth,
    simulate_portfolio, CommonNoisePath, EmpiricalSnapshot, PortfolioRun, SimOptions,
};
use lpsv_core::quadrature::linspace;
use lpsv_core::smoothing::{convergence_study, energy_identity_residual, SampledField, TransformedKernel};
use lpsv_core::spde::{mixture_loss, SolutionSeries, SolverConfig, SpdeSolver};
use lpsv_core::verify::{compare_loss_curves, ou_conditional_density_oracle};
use serde::Serialize;
use serde_json::json;

use crate::config::{is_constant_q, steps_for, GridFormat, Scenario, Seeds, SmoothFunction, Task};
use crate::error::{CliError, CliResult};
use crate::output::{sha256_hex, FileEntry, OutputDir};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` of the scenario.
    pub out: Option<PathBuf>,
    /// Replaces every seed, see [`Seeds::from_override`].
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub lpsv_cli: &'static str,
    pub lpsv_core: &'static str,
}

/// Everything needed to reproduce a run. Written last, as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub seed_override: Option<u64>,
    pub seeds: Seeds,
    pub tasks: Vec<&'static str>,
    pub versions: Versions,
    pub files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";

/// Validates `scenario` (after applying overrides), runs its tasks and
/// writes every artifact plus the manifest.
pub fn run_scenario(scenario: &Scenario, raw_config: &[u8], opts: &RunOptions) -> CliResult<Manifest> {
    let mut scenario = scenario.clone();
    if let Some(k) = opts.seed_override {
        scenario.seeds = Seeds::from_override(k);
    }
    scenario.validate()?;
    let root = opts
        .out
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .ok_or_else(|| CliError::Validation("no output directory: set output_dir or pass --out".into()))?;
    let mut out = OutputDir::create(&root)?;

    let mut runner = Runner::new(&scenario)?;
    for task in scenario.planned_tasks() {
        runner.run(task, &mut out)?;
    }
    out.flush_reports()?;

    let manifest = Manifest {
        name: scenario.name.clone(),
        config_sha256: sha256_hex(raw_config),
        seed_override: opts.seed_override,
        seeds: scenario.seeds,
        tasks: scenario.planned_tasks().iter().map(|t| t.name()).collect(),
        versions: Versions { lpsv_cli: env!("CARGO_PKG_VERSION"), lpsv_core: lpsv_core::VERSION },
        files: out.files().to_vec(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    bytes.push(b'\n');
    std::fs::write(out.root().join(MANIFEST), bytes).map_err(|e| CliError::Io {
        message: format!("writing {MANIFEST}: {e}"),
        completed: out.files().iter().map(|f| f.path.clone()).collect(),
    })?;
    Ok(manifest)
}

fn setup_error(e: lpsv_core::Error) -> CliError {
    CliError::Validation(e.to_string())
}

struct Runner<'a> {
    scenario: &'a Scenario,
    spec: VolSpec,
    coeffs: Vec<CoefficientVector>,
    weights: Vec<f64>,
    solver_configs: Vec<SolverConfig>,
    noise: Option<CommonNoisePath>,
    particles: Option<PortfolioRun>,
    solutions: Vec<SolutionSeries>,
    execution: Execution,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario) -> CliResult<Self> {
        let spec = scenario.vol.spec().map_err(setup_error)?;
        let coeffs = scenario.coefficient_vectors();
        if coeffs.windows(2).any(|w| w[0].rho3 != w[1].rho3) {
            return Err(CliError::Validation(
                "all coefficients entries share the common noise and need the same rho3".into(),
            ));
        }
        let mut solver_configs = Vec::new();
        if scenario.has(Task::Solve) {
            let s = scenario.solver.expect("validated");
            for c in &coeffs {
                let cfg = match (s.x_max, s.y_min, s.y_max) {
                    (Some(x_max), Some(y_min), Some(y_max)) => SolverConfig::fitted(
                        c, &spec, scenario.horizon, s.dx, s.dy, x_max, y_min, y_max, s.cfl_safety,
                    ),
                    _ => SolverConfig::auto(c, &spec, scenario.initial.mean_x(), scenario.horizon, s.dx, s.dy, s.cfl_safety),
                }
                .map_err(setup_error)?;
                solver_configs.push(cfg.with_scheme(s.scheme));
            }
            // One time grid for every entry: the finest step wins.
            let dt = solver_configs.iter().map(|c| c.dt).fold(f64::INFINITY, f64::min);
            solver_configs.iter_mut().for_each(|c| c.dt = dt);
        }
        Ok(Runner {
            scenario,
            spec,
            coeffs,
            weights: scenario.weights(),
            solver_configs,
            noise: None,
            particles: None,
            solutions: Vec::new(),
            execution: Execution::default(),
        })
    }

    fn noise(&mut self) -> CliResult<&CommonNoisePath> {
        if self.noise.is_none() {
            let sc = self.scenario;
            let dt = match self.solver_configs.first() {
                Some(cfg) => cfg.dt,
                None => sc.dt.expect("validated"),
            };
            let n = steps_for(sc.horizon, dt)?;
            let seed = sc.seeds.noise.expect("validated");
            self.noise = Some(generate_common_noise(dt, n, self.coeffs[0].rho3, seed)?);
        }
        Ok(self.noise.as_ref().expect("just set"))
    }

    fn run(&mut self, task: Task, out: &mut OutputDir) -> CliResult<()> {
        match task {
            Task::Simulate => self.simulate(out),
            Task::Solve => self.solve(out),
            Task::Compare => self.compare(out),
            Task::VolDensity => self.vol_density(out),
            Task::SmoothStudy => self.smooth_study(out),
            Task::EnergyResidual => self.energy(out),
        }
    }

    fn simulate(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let sc = self.scenario;
        let p = sc.particles.as_ref().expect("validated");
        let init = sc.initial.sample(p.n, sc.seeds.initial.expect("validated"));
        // Entry j owns the particles in [round(W_{j-1} n), round(W_j n)).
        let params: Vec<CoefficientVector> = if self.coeffs.len() == 1 {
            self.coeffs.clone()
        } else {
            let mut acc = 0.0;
            let mut params = Vec::with_capacity(p.n);
            for (c, w) in self.coeffs.iter().zip(&self.weights) {
                acc += w;
                let end = ((acc * p.n as f64).round() as usize).min(p.n);
                params.resize(end.max(params.len()), *c);
            }
            params.resize(p.n, *self.coeffs.last().expect("non-empty"));
            params
        };
        let opts = SimOptions {
            absorption: p.absorption.into(),
            record_every: p.record_every,
            execution: self.execution,
            ..Default::default()
        };
        let seed = sc.seeds.particles.expect("validated");
        let spec = self.spec.clone();
        let noise = self.noise()?.clone();
        let run = simulate_portfolio(&params, &spec, &init, &noise, seed, opts)?;
        out.write_loss("loss.csv", &run.times, &run.loss)?;

        if let (Some(xe), Some(ye)) = (&p.x_edges, &p.y_edges) {
            let mut rows = Vec::new();
            for state in &run.states {
                let snap = EmpiricalSnapshot::new(state, xe, ye).map_err(setup_error)?;
                let ny = ye.len() - 1;
                for (i, count) in snap.counts.iter().enumerate() {
                    rows.push([snap.t, snap.loss, (i / ny) as f64, (i % ny) as f64, *count as f64]);
                }
            }
            out.write_csv("snapshots.csv", "t,loss,bin_x,bin_y,count", rows)?;
        }
        out.report(&json!({
            "task": "simulate",
            "particles": p.n,
            "dt": noise.dt,
            "steps": noise.n_steps,
            "final_loss": run.loss.last(),
        }))?;
        self.particles = Some(run);
        Ok(())
    }

    fn solve(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let sc = self.scenario;
        let s = sc.solver.expect("validated");
        let noise = self.noise()?.clone();
        for (i, (c, cfg)) in self.coeffs.iter().zip(&self.solver_configs).enumerate() {
            let mut solver = SpdeSolver::new(*cfg, c, &self.spec)?.with_execution(self.execution);
            let law = sc.initial;
            let g = solver.init(|x, y| law.density(x, y, cfg.dy))?;
            let series = solver.solve(&g, &noise, s.record_every)?;
            let last = series.snapshots.last().expect("final snapshot");
            if matches!(s.grid_format, GridFormat::Csv | GridFormat::Both) {
                out.write_grid_csv(&format!("grid_{i}_final.csv"), last)?;
            }
            if matches!(s.grid_format, GridFormat::Binary | GridFormat::Both) {
                out.write_grid_binary(&format!("grid_{i}_final.lpsv"), last)?;
            }
            out.report(&json!({
                "task": "solve",
                "entry": i,
                "dt": cfg.dt,
                "steps": noise.n_steps,
                "nx": cfg.nx(),
                "ny": cfg.ny(),
                "final_loss": series.loss().last(),
                "min_value": last.min_value(),
                "warnings": solver.warnings(),
            }))?;
            self.solutions.push(series);
        }
        let loss = mixture_loss(&self.solutions, &self.weights)?;
        out.write_loss("spde_loss.csv", &self.solutions[0].times, &loss)?;
        Ok(())
    }

    fn compare(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let sc = self.scenario;
        let tol = sc.compare.unwrap_or_default().tolerance;
        let run = self.particles.as_ref().expect("simulate runs first");
        let spde = mixture_loss(&self.solutions, &self.weights)?;
        let report = compare_loss_curves(&sc.name, &run.times, &run.loss, &self.solutions[0].times, &spde, tol)?;
        let mut value = serde_json::to_value(&report).expect("report serialises");
        value["task"] = json!("compare");
        out.report(&value)
    }

    fn vol_density(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let sc = self.scenario;
        let v = sc.vol_density.expect("validated");
        let c = self.coeffs[0];
        let t = v.t.unwrap_or(sc.horizon);
        let sigma0 = v.sigma0.unwrap_or(c.theta);
        let seed = sc.seeds.particles.expect("validated");
        let noise = self.noise()?.clone();
        let samples = conditional_vol_samples(&c, &self.spec, sigma0, &noise, t, v.n_inner, seed, self.execution)?;
        let bandwidth = v.bandwidth.unwrap_or_else(|| silverman_bandwidth(&samples));
        let kde = gaussian_kde(&samples, bandwidth, self.execution)?;
        out.write_csv("vol_density.csv", "y,density", kde.y.iter().zip(&kde.density).map(|(y, d)| [*y, *d]))?;
        let oracle_l1 = if is_constant_q(&self.spec) {
            let (mean, var) = ou_conditional_density_oracle(&c, &self.spec, sigma0, &noise, t)?;
            let pdf = |y: f64| (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            Some(kde.y.iter().zip(&kde.density).map(|(y, d)| (d - pdf(*y)).abs()).sum::<f64>() * kde.spacing())
        } else {
            None
        };
        out.report(&json!({
            "task": "vol-density",
            "t": t,
            "n_inner": v.n_inner,
            "bandwidth": bandwidth,
            "mass": kde.mass(),
            "sup": kde.sup(),
            "sample_mean": kde.sample_mean,
            "sample_variance": kde.sample_variance,
            "gaussian_oracle_l1": oracle_l1,
        }))
    }

    fn smooth_study(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let s = self.scenario.smooth_study.as_ref().expect("validated");
        let map = LampertiMap::new(self.spec.clone(), self.coeffs[0]);
        let z = linspace(s.z_range[0], s.z_range[1], s.nz);
        let y = linspace(s.y_range[0], s.y_range[1], s.ny);
        let field = match s.function {
            SmoothFunction::Gaussian => {
                SampledField::from_fn(1, z, |_, z| (-z * z).exp(), Some(|_: usize, z: f64| -2.0 * z * (-z * z).exp()))
            }
            SmoothFunction::Bump => SampledField::from_fn(
                1,
                z,
                |_, z| if z.abs() < 1.0 { (-1.0 / (1.0 - z * z)).exp() } else { 0.0 },
                Some(|_: usize, z: f64| {
                    if z.abs() < 1.0 {
                        let d = 1.0 - z * z;
                        -2.0 * z / (d * d) * (-1.0 / d).exp()
                    } else {
                        0.0
                    }
                }),
            ),
            SmoothFunction::Indicator => SampledField::from_fn(
                1,
                z,
                |_, z| if (-0.5..=0.5).contains(&z) { 1.0 } else { 0.0 },
                None::<fn(usize, f64) -> f64>,
            ),
        }?;
        let rows = convergence_study(&field, &map, &s.epsilons, &y)?;
        out.write_csv(
            "smooth_study.csv",
            "epsilon,distance,derivative_distance",
            rows.iter().map(|r| [r.epsilon, r.distance, r.derivative_distance.unwrap_or(f64::NAN)]),
        )?;
        let decreasing = rows.windows(2).all(|w| w[1].distance < w[0].distance);
        out.report(&json!({
            "task": "smooth-study",
            "function": s.function,
            "distances": rows.iter().map(|r| r.distance).collect::<Vec<_>>(),
            "strictly_decreasing": decreasing,
        }))
    }

    fn energy(&mut self, out: &mut OutputDir) -> CliResult<()> {
        let e = self.scenario.energy.expect("validated");
        let map = LampertiMap::new(self.spec.clone(), self.coeffs[0]);
        let kernel = TransformedKernel::new(map, e.epsilon)?;
        let r = energy_identity_residual(
            &self.solutions[..1],
            &self.coeffs[0],
            &self.spec,
            &kernel,
            e.weight.into(),
            self.execution,
        )?;
        out.report(&json!({
            "task": "energy-residual",
            "epsilon": e.epsilon,
            "residual": r.residual,
            "pathwise_residual": r.pathwise_residual,
            "all_finite": r.mean_terms.all_finite(),
            "terms": r.mean_terms,
        }))
    }
}
