//! Explicit finite differences for the density SPDE
//!
//! ```text
//! du = [ -(r - h²/2) u_x - ∂_y(k(θ - y) u) + ½h² u_xx + ρ (h q u)_xy + ½ξ² (q² u)_yy ] dt
//!      - ρ₁ h u_x dW0 - ξ ρ₂ (q u)_y dB0
//! ```
//!
//! with `u = 0` on every edge of the truncated box (at `x = 0` this is the
//! absorbing boundary). Transport in `x` and `y` is upwinded, second-order
//! terms and the stochastic transport are centred.

use serde::{Deserialize, Serialize};

use super::grid::DensityGrid;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{check_correlation_condition, correlation_condition_sides, CoefficientVector, VolSpec};
use crate::particle::CommonNoisePath;

/// Time discretisation of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `u + dt·L u + S u`, both operators applied to the old state.
    Explicit,
    /// Deterministic step first, then stochastic transport of its result.
    #[default]
    LieSplitting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub cfl_safety: f64,
}

impl SolverConfig {
    /// Box and step from the default rules: `X_max = 10(x̄₀ + h_max√T)`,
    /// `y ∈ θ ± 8ξM_q/√(2k)`, and `dt` the largest step with
    /// `dt <= cfl_safety · stable_dt` that divides `T` evenly.
    pub fn auto(
        c: &CoefficientVector,
        spec: &VolSpec,
        mean_x0: f64,
        horizon: f64,
        dx: f64,
        dy: f64,
        cfl_safety: f64,
    ) -> Result<Self> {
        if !(c.xi > 0.0 && c.k > 0.0) {
            return Err(Error::Config(
                "default y range needs xi > 0 and k > 0; set y_min and y_max explicitly".into(),
            ));
        }
        let half = 8.0 * c.xi * spec.q_max() / (2.0 * c.k).sqrt();
        let x_max = 10.0 * (mean_x0 + spec.h_max() * horizon.sqrt());
        Self::fitted(c, spec, horizon, dx, dy, x_max, c.theta - half, c.theta + half, cfl_safety)
    }

    /// Given box and spacings, picks `dt` as in [`auto`](Self::auto).
    #[allow(clippy::too_many_arguments)]
    pub fn fitted(
        c: &CoefficientVector,
        spec: &VolSpec,
        horizon: f64,
        dx: f64,
        dy: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        cfl_safety: f64,
    ) -> Result<Self> {
        let mut cfg = SolverConfig {
            dx,
            dy,
            dt: 0.0,
            x_max,
            y_min,
            y_max,
            scheme: Scheme::LieSplitting,
            cfl_safety,
        };
        cfg.check_geometry()?;
        let limit = cfl_safety * stable_dt(&cfg, c, spec);
        let steps = (horizon / limit).ceil().max(1.0);
        cfg.dt = horizon / steps;
        Ok(cfg)
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn nx(&self) -> usize {
        (self.x_max / self.dx).round() as usize + 1
    }

    pub fn ny(&self) -> usize {
        ((self.y_max - self.y_min) / self.dy).round() as usize + 1
    }

    fn check_geometry(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("dx", self.dx)?;
        pos("dy", self.dy)?;
        pos("x_max", self.x_max)?;
        if !(self.y_max > self.y_min) {
            return Err(Error::Config(format!(
                "y range [{}, {}] is empty",
                self.y_min, self.y_max
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return Err(Error::Config(format!(
                "cfl_safety must lie in (0,1), got {}",
                self.cfl_safety
            )));
        }
        if self.nx() < 3 || self.ny() < 3 {
            return Err(Error::Config("grid needs at least 3 nodes per direction".into()));
        }
        Ok(())
    }
}

/// Largest stable explicit step: the reciprocal of the summed rates
/// `h²/dx² + ξ²q²/dy² + |ρ|hq/(dx dy) + |r - h²/2|/dx + |k(θ - y)|/dy`,
/// each maximised over the grid rows.
pub fn stable_dt(cfg: &SolverConfig, c: &CoefficientVector, spec: &VolSpec) -> f64 {
    let ny = cfg.ny();
    let mut rate: f64 = 0.0;
    for k in 0..ny {
        let y = cfg.y_min + k as f64 * cfg.dy;
        let h = spec.h.value(y);
        let q = spec.q.value(y);
        let b = (c.k * (c.theta - y)).abs();
        let r = h * h / (cfg.dx * cfg.dx)
            + (c.xi * q / cfg.dy).powi(2)
            + c.rho.abs() * h * q / (cfg.dx * cfg.dy)
            + (c.r - 0.5 * h * h).abs() / cfg.dx
            + b / cfg.dy;
        rate = rate.max(r);
    }
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

/// Solver for one coefficient vector on one grid layout.
#[derive(Debug, Clone)]
pub struct SpdeSolver {
    cfg: SolverConfig,
    c: CoefficientVector,
    nx: usize,
    ny: usize,
    h: Vec<f64>,
    q: Vec<f64>,
    drift_x: Vec<f64>,
    /// `k(θ - y)` at the face between rows `k` and `k + 1`.
    drift_y_face: Vec<f64>,
    execution: Execution,
    warnings: Vec<String>,
}

/// Solution of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSeries {
    pub dt: f64,
    /// Grid times `0, dt, ..., T`.
    pub times: Vec<f64>,
    /// Survival mass at every grid time.
    pub mass: Vec<f64>,
    /// Grids at recorded times (always the first and last).
    pub snapshots: Vec<DensityGrid>,
    /// Common-noise increments between consecutive snapshots.
    pub increments: Option<Vec<(f64, f64)>>,
}

impl SolutionSeries {
    pub fn loss(&self) -> Vec<f64> {
        self.mass.iter().map(|m| 1.0 - m).collect()
    }
}

impl SpdeSolver {
    /// Checks the correlation condition and the step size, then precomputes
    /// the row coefficients.
    pub fn new(cfg: SolverConfig, c: &CoefficientVector, spec: &VolSpec) -> Result<Self> {
        c.validate()?;
        if !check_correlation_condition(c) {
            let (lhs, rhs) = correlation_condition_sides(c);
            return Err(Error::CorrelationCondition { lhs, rhs });
        }
        cfg.check_geometry()?;
        let limit = stable_dt(&cfg, c, spec);
        if !(cfg.dt > 0.0) || cfg.dt > cfg.cfl_safety * limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {} exceeds cfl_safety · stable step = {} · {limit:.6e}",
                cfg.dt, cfg.cfl_safety
            )));
        }
        let nx = cfg.nx();
        let ny = cfg.ny();
        let y = |k: usize| cfg.y_min + k as f64 * cfg.dy;
        let h: Vec<f64> = (0..ny).map(|k| spec.h.value(y(k))).collect();
        let q: Vec<f64> = (0..ny).map(|k| spec.q.value(y(k))).collect();
        let drift_x = h.iter().map(|h| c.r - 0.5 * h * h).collect();
        let drift_y_face = (0..ny - 1).map(|k| c.k * (c.theta - (y(k) + 0.5 * cfg.dy))).collect();
        Ok(SpdeSolver {
            cfg,
            c: *c,
            nx,
            ny,
            h,
            q,
            drift_x,
            drift_y_face,
            execution: Execution::default(),
            warnings: Vec::new(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Notes recorded during initialisation.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn empty_grid(&self) -> DensityGrid {
        DensityGrid::zeros(self.cfg.dx, self.nx, self.cfg.y_min, self.cfg.dy, self.ny)
    }

    /// Samples `u0` on the grid, zeroes the edges and rescales to unit mass.
    pub fn init<F: Fn(f64, f64) -> f64>(&mut self, u0: F) -> Result<DensityGrid> {
        let mut g = self.empty_grid();
        for j in 0..self.nx {
            for k in 0..self.ny {
                let v = u0(g.x(j), g.y(k));
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Input(format!(
                        "initial density is {v} at ({}, {})",
                        g.x(j),
                        g.y(k)
                    )));
                }
                g.set(j, k, v);
            }
        }
        g.pin_boundary();
        let mass = g.survival_mass().mass;
        if !(mass > 0.0) {
            return Err(Error::Degenerate("initial density has zero mass on the grid".into()));
        }
        g.values.iter_mut().for_each(|v| *v /= mass);
        let support = g.values.iter().filter(|v| **v > 0.0).count();
        if support < 9 {
            self.warnings.push(format!(
                "initial density is concentrated on {support} grid nodes; the grid cannot resolve it"
            ));
        }
        Ok(g)
    }

    /// Starts from an already sampled grid (for zero or linear-combination
    /// runs); only the layout is checked and the edges are zeroed.
    pub fn init_from(&self, mut grid: DensityGrid) -> Result<DensityGrid> {
        if !grid.same_layout(&self.empty_grid()) {
            return Err(Error::Shape("grid layout does not match the solver".into()));
        }
        grid.pin_boundary();
        Ok(grid)
    }

    /// One time step with the given common-noise increments.
    pub fn advance(&self, grid: &mut DensityGrid, dw0: f64, db0: f64) -> Result<()> {
        let dt = self.cfg.dt;
        let mut out = vec![0.0; grid.values.len()];
        match self.cfg.scheme {
            Scheme::LieSplitting => {
                self.deterministic(&grid.values, &mut out, dt);
                let mid = std::mem::take(&mut out);
                out = vec![0.0; mid.len()];
                self.stochastic(&mid, &mut out, dw0, db0);
            }
            Scheme::Explicit => {
                let mut stoch = vec![0.0; grid.values.len()];
                self.deterministic(&grid.values, &mut out, dt);
                self.stochastic_increment(&grid.values, &mut stoch, dw0, db0);
                for (o, s) in out.iter_mut().zip(&stoch) {
                    *o += s;
                }
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            let step = (grid.t / dt).round() as usize;
            return Err(Error::Divergence {
                step,
                what: format!("u at node (j={}, k={})", i / self.ny, i % self.ny),
            });
        }
        grid.values = out;
        grid.t += dt;
        Ok(())
    }

    /// Advances through the whole noise path. Full grids are kept every
    /// `record_every` steps (`0`: first and last only).
    pub fn solve(
        &self,
        initial: &DensityGrid,
        noise: &CommonNoisePath,
        record_every: usize,
    ) -> Result<SolutionSeries> {
        if (noise.dt - self.cfg.dt).abs() > 1e-12 * self.cfg.dt {
            return Err(Error::Shape(format!(
                "noise step {} differs from solver step {}",
                noise.dt, self.cfg.dt
            )));
        }
        let mut g = self.init_from(initial.clone())?;
        g.t = 0.0;
        let mut times = vec![0.0];
        let mut mass = vec![g.survival_mass().mass];
        let mut snapshots = vec![g.clone()];
        let mut increments = Vec::new();
        let mut acc = (0.0, 0.0);
        for step in 0..noise.n_steps {
            let (dw, db) = (noise.increments_w0[step], noise.increments_b0[step]);
            self.advance(&mut g, dw, db)?;
            g.t = (step + 1) as f64 * noise.dt;
            acc.0 += dw;
            acc.1 += db;
            times.push(g.t);
            mass.push(g.survival_mass().mass);
            let last = step + 1 == noise.n_steps;
            if last || (record_every > 0 && (step + 1) % record_every == 0) {
                snapshots.push(g.clone());
                increments.push(acc);
                acc = (0.0, 0.0);
            }
        }
        Ok(SolutionSeries { dt: noise.dt, times, mass, snapshots, increments: Some(increments) })
    }

    /// `out = u + dt·L u` on interior nodes, zero on the edges.
    fn deterministic(&self, u: &[f64], out: &mut [f64], dt: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let (dx, dy) = (self.cfg.dx, self.cfg.dy);
        let c = &self.c;
        let half_xi2 = 0.5 * c.xi * c.xi;
        let cross = c.rho / (4.0 * dx * dy);
        let (h, q, ax, by) = (&self.h, &self.q, &self.drift_x, &self.drift_y_face);
        self.execution.for_each_chunk_mut(out, ny, |j, row| {
            row.iter_mut().for_each(|v| *v = 0.0);
            if j == 0 || j + 1 >= nx {
                return;
            }
            let at = |jj: usize, k: usize| u[jj * ny + k];
            for k in 1..ny - 1 {
                let u0 = at(j, k);
                let a = ax[k];
                let adv_x = if a > 0.0 { a * (u0 - at(j - 1, k)) } else { a * (at(j + 1, k) - u0) } / dx;
                let diff_x = 0.5 * h[k] * h[k] * (at(j + 1, k) - 2.0 * u0 + at(j - 1, k)) / (dx * dx);
                let flux = |f: usize| {
                    let b = by[f];
                    b * if b > 0.0 { at(j, f) } else { at(j, f + 1) }
                };
                let adv_y = (flux(k) - flux(k - 1)) / dy;
                let g = |kk: usize| q[kk] * q[kk] * at(j, kk);
                let diff_y = half_xi2 * (g(k + 1) - 2.0 * g(k) + g(k - 1)) / (dy * dy);
                let p = |jj: usize, kk: usize| h[kk] * q[kk] * at(jj, kk);
                let mixed = cross
                    * (p(j + 1, k + 1) - p(j + 1, k - 1) - p(j - 1, k + 1) + p(j - 1, k - 1));
                row[k] = u0 + dt * (-adv_x - adv_y + diff_x + diff_y + mixed);
            }
        });
    }

    /// `out = v + S v` on interior nodes.
    fn stochastic(&self, v: &[f64], out: &mut [f64], dw0: f64, db0: f64) {
        self.stochastic_increment(v, out, dw0, db0);
        let ny = self.ny;
        for (i, o) in out.iter_mut().enumerate() {
            let (j, k) = (i / ny, i % ny);
            if j > 0 && j + 1 < self.nx && k > 0 && k + 1 < ny {
                *o += v[i];
            }
        }
    }

    /// `out = S v` on interior nodes: centred stochastic transport.
    fn stochastic_increment(&self, v: &[f64], out: &mut [f64], dw0: f64, db0: f64) {
        let (nx, ny) = (self.nx, self.ny);
        let c = &self.c;
        let sx = c.rho1 * dw0 / (2.0 * self.cfg.dx);
        let sy = c.xi * c.rho2 * db0 / (2.0 * self.cfg.dy);
        let (h, q) = (&self.h, &self.q);
        self.execution.for_each_chunk_mut(out, ny, |j, row| {
            row.iter_mut().for_each(|x| *x = 0.0);
            if j == 0 || j + 1 >= nx || (sx == 0.0 && sy == 0.0) {
                return;
            }
            let at = |jj: usize, k: usize| v[jj * ny + k];
            for k in 1..ny - 1 {
                row[k] = -sx * h[k] * (at(j + 1, k) - at(j - 1, k))
                    - sy * (q[k + 1] * at(j, k + 1) - q[k - 1] * at(j, k - 1));
            }
        });
    }
}

/// `1 - Σ wᵢ massᵢ(t)` for mass curves on a common time grid.
pub fn mixture_loss(series: &[SolutionSeries], weights: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() || series.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} solutions for {} weights",
            series.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
    }
    let times = &series[0].times;
    for s in &series[1..] {
        if s.times.len() != times.len()
            || s.times.iter().zip(times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()))
        {
            return Err(Error::Shape("solutions are on different time grids".into()));
        }
    }
    Ok((0..times.len())
        .map(|i| 1.0 - series.iter().zip(weights).map(|(s, w)| w * s.mass[i]).sum::<f64>())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolMap;
    use crate::particle::generate_common_noise;
    use proptest::prelude::*;

    fn ou_setup() -> (CoefficientVector, VolSpec) {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.5);
        let spec = VolSpec::ornstein_uhlenbeck(1.0, 0.3).unwrap().with_h(VolMap::ClampAbs { min: 0.1, max: 0.5 }).unwrap();
        (c, spec)
    }

    fn small_solver() -> (SpdeSolver, DensityGrid) {
        let (c, spec) = ou_setup();
        let cfg = SolverConfig::fitted(&c, &spec, 0.2, 0.05, 0.1, 3.0, -1.5, 1.9, 0.5).unwrap();
        let mut s = SpdeSolver::new(cfg, &c, &spec).unwrap();
        let g = s
            .init(|x, y| x * (-x * x / 0.5).exp() * (-(y - 0.2) * (y - 0.2) / 0.1).exp())
            .unwrap();
        (s, g)
    }

    #[test]
    fn init_normalises_and_pins() {
        let (s, g) = small_solver();
        assert!((g.survival_mass().mass - 1.0).abs() < 1e-12);
        for k in 0..g.ny {
            assert_eq!(g.get(0, k), 0.0);
        }
        assert!(s.warnings().is_empty());
    }

    #[test]
    fn init_rejects_zero_mass_and_warns_on_spikes() {
        let (c, spec) = ou_setup();
        let cfg = SolverConfig::fitted(&c, &spec, 0.2, 0.05, 0.1, 3.0, -1.5, 1.9, 0.5).unwrap();
        let mut s = SpdeSolver::new(cfg, &c, &spec).unwrap();
        assert!(matches!(s.init(|_, _| 0.0), Err(Error::Degenerate(_))));
        // Mass only on the x = 0 edge is pinned away.
        assert!(matches!(s.init(|x, _| if x == 0.0 { 1.0 } else { 0.0 }), Err(Error::Degenerate(_))));
        let g = s
            .init(|x, y| if (x - 1.0).abs() < 1e-9 && (y - 0.2).abs() < 0.05 { 1.0 } else { 0.0 })
            .unwrap();
        assert!((g.survival_mass().mass - 1.0).abs() < 1e-12);
        assert_eq!(s.warnings().len(), 1);
    }

    #[test]
    fn rejects_large_steps_and_bad_correlation() {
        let (c, spec) = ou_setup();
        let mut cfg = SolverConfig::fitted(&c, &spec, 0.2, 0.05, 0.1, 3.0, -1.5, 1.9, 0.5).unwrap();
        cfg.dt *= 2.5;
        assert!(matches!(SpdeSolver::new(cfg, &c, &spec), Err(Error::Config(_))));
        let bad = c.with_rho(0.5);
        let cfg = SolverConfig::fitted(&bad, &spec, 0.2, 0.05, 0.1, 3.0, -1.5, 1.9, 0.5).unwrap();
        assert!(matches!(SpdeSolver::new(cfg, &bad, &spec), Err(Error::CorrelationCondition { .. })));
    }

    #[test]
    fn zero_stays_zero() {
        let (s, _) = small_solver();
        let noise = generate_common_noise(s.config().dt, 50, 0.5, 1).unwrap();
        let out = s.solve(&s.empty_grid(), &noise, 10).unwrap();
        assert!(out.snapshots.iter().all(|g| g.max_abs() == 0.0));
    }

    #[test]
    fn zero_increments_give_the_deterministic_step() {
        let (s, g) = small_solver();
        let mut a = g.clone();
        s.advance(&mut a, 0.0, 0.0).unwrap();
        let mut b = vec![0.0; g.values.len()];
        s.deterministic(&g.values, &mut b, s.config().dt);
        assert_eq!(a.values, b);
        let e = s.clone().with_execution(Execution::Sequential);
        let mut c = g.clone();
        e.advance(&mut c, 0.01, -0.02).unwrap();
        let mut d = g.clone();
        s.advance(&mut d, 0.01, -0.02).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn mass_only_decreases_without_noise() {
        let (s, g) = small_solver();
        let noise = CommonNoisePath::zero(s.config().dt, 100);
        let out = s.solve(&g, &noise, 0).unwrap();
        assert!(out.mass.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn mixture_examples() {
        let (s, g) = small_solver();
        let noise = generate_common_noise(s.config().dt, 20, 0.5, 3).unwrap();
        let one = s.solve(&g, &noise, 0).unwrap();
        let single = mixture_loss(std::slice::from_ref(&one), &[1.0]).unwrap();
        assert_eq!(single, one.loss());
        let two = mixture_loss(&[one.clone(), one.clone()], &[0.3, 0.7]).unwrap();
        for (a, b) in two.iter().zip(&single) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(mixture_loss(&[one.clone()], &[0.9]).is_err());
        let short = CommonNoisePath::zero(s.config().dt, 10);
        let other = s.solve(&g, &short, 0).unwrap();
        assert!(matches!(mixture_loss(&[one, other], &[0.5, 0.5]), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn advance_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, dw in -0.05f64..0.05, db in -0.05f64..0.05) {
            let (s, g1) = small_solver();
            let mut g2 = g1.clone();
            for (i, v) in g2.values.iter_mut().enumerate() {
                *v = ((i * 7919) % 113) as f64 / 113.0;
            }
            g2.pin_boundary();
            let mut mix = g1.combine(a, &g2, b).unwrap();
            let mut s1 = g1.clone();
            let mut s2 = g2.clone();
            s.advance(&mut mix, dw, db).unwrap();
            s.advance(&mut s1, dw, db).unwrap();
            s.advance(&mut s2, dw, db).unwrap();
            let expect = s1.combine(a, &s2, b).unwrap();
            let scale = expect.max_abs().max(1e-300);
            for (x, y) in mix.values.iter().zip(&expect.values) {
                prop_assert!((x - y).abs() <= 1e-10 * scale);
            }
        }
    }
}
