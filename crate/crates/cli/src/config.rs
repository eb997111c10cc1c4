//! Scenario files: TOML, unknown keys rejected.
//!
//! See `docs/scenario.md` at the repository root for the schema.

use std::path::{Path, PathBuf};

use lpsv_core::initial::InitialLaw;
use lpsv_core::model::{
    check_correlation_condition, correlation_condition_sides, CoefficientVector, VolMap, VolOfVol,
    VolSpec,
};
use lpsv_core::particle::Absorption;
use lpsv_core::smoothing::Weight;
use lpsv_core::spde::Scheme;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Simulate,
    Solve,
    Compare,
    VolDensity,
    SmoothStudy,
    EnergyResidual,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Solve => "solve",
            Task::Compare => "compare",
            Task::VolDensity => "vol-density",
            Task::SmoothStudy => "smooth-study",
            Task::EnergyResidual => "energy-residual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Common noise `(W0, B0)`.
    pub noise: Option<u64>,
    /// Idiosyncratic particle streams.
    pub particles: Option<u64>,
    /// Draws from the initial law.
    pub initial: Option<u64>,
}

impl Seeds {
    /// Every seed derived from one value: `noise = K`, `particles = K + 1`,
    /// `initial = K + 2`.
    pub fn from_override(k: u64) -> Self {
        Seeds {
            noise: Some(k),
            particles: Some(k.wrapping_add(1)),
            initial: Some(k.wrapping_add(2)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientEntry {
    pub k: f64,
    pub theta: f64,
    pub xi: f64,
    pub r: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    /// Cross coefficient of the density equation; `ξρ₃ρ₁ρ₂` when absent.
    pub rho: Option<f64>,
    /// Mixture weight; required when more than one entry is given.
    pub weight: Option<f64>,
}

impl CoefficientEntry {
    pub fn coefficients(&self) -> CoefficientVector {
        let c = CoefficientVector::standard(self.k, self.theta, self.xi, self.r, self.rho1, self.rho2, self.rho3);
        match self.rho {
            Some(rho) => c.with_rho(rho),
            None => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum QConfig {
    Constant { value: f64 },
    /// `base + amplitude / (1 + z²)`.
    Rational {
        #[serde(default = "default_base")]
        base: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

fn default_base() -> f64 {
    2.0
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HConfig {
    Constant { value: f64 },
    /// `clamp(|y|, min, max)`.
    ClampAbs { min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolConfig {
    pub q: QConfig,
    pub h: HConfig,
}

impl VolConfig {
    pub fn spec(&self) -> lpsv_core::Result<VolSpec> {
        let h = match self.h {
            HConfig::Constant { value } => VolMap::Constant(value),
            HConfig::ClampAbs { min, max } => VolMap::ClampAbs { min, max },
        };
        match self.q {
            QConfig::Constant { value } => VolSpec::ornstein_uhlenbeck(value, 1.0)?.with_h(h),
            QConfig::Rational { base, amplitude } => VolSpec::rational_with(base, amplitude, h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AbsorptionName {
    #[default]
    EndOfStep,
    BrownianBridge,
}

impl From<AbsorptionName> for Absorption {
    fn from(a: AbsorptionName) -> Self {
        match a {
            AbsorptionName::EndOfStep => Absorption::EndOfStep,
            AbsorptionName::BrownianBridge => Absorption::BrownianBridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    #[serde(default)]
    pub absorption: AbsorptionName,
    /// Histogram snapshots every this many steps (`0`: first and last).
    #[serde(default)]
    pub record_every: usize,
    /// Histogram bin edges; snapshots are written when both are given.
    pub x_edges: Option<Vec<f64>>,
    pub y_edges: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridFormat {
    Csv,
    Binary,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dx: f64,
    pub dy: f64,
    #[serde(default = "default_cfl")]
    pub cfl_safety: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Box; the default rule applies when all three are absent.
    pub x_max: Option<f64>,
    pub y_min: Option<f64>,
    pub y_max: Option<f64>,
    /// Keep full grids every this many steps (`0`: first and last).
    #[serde(default)]
    pub record_every: usize,
    #[serde(default)]
    pub grid_format: GridFormat,
}

fn default_cfl() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "default_compare_tolerance")]
    pub tolerance: f64,
}

fn default_compare_tolerance() -> f64 {
    0.02
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { tolerance: default_compare_tolerance() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolDensityConfig {
    pub n_inner: usize,
    /// Kernel bandwidth; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
    /// Starting volatility; `θ` when absent.
    pub sigma0: Option<f64>,
    /// Evaluation time on the noise grid; the horizon when absent.
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothFunction {
    Gaussian,
    Bump,
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothStudyConfig {
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub function: SmoothFunction,
    #[serde(default = "default_z_range")]
    pub z_range: [f64; 2],
    #[serde(default = "default_nz")]
    pub nz: usize,
    #[serde(default = "default_y_range")]
    pub y_range: [f64; 2],
    #[serde(default = "default_ny")]
    pub ny: usize,
}

fn default_z_range() -> [f64; 2] {
    [-6.0, 6.0]
}

fn default_nz() -> usize {
    1201
}

fn default_y_range() -> [f64; 2] {
    [-2.5, 2.5]
}

fn default_ny() -> usize {
    501
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightName {
    #[default]
    MinOne,
    One,
}

impl From<WeightName> for Weight {
    fn from(w: WeightName) -> Self {
        match w {
            WeightName::MinOne => Weight::MinOne,
            WeightName::One => Weight::One,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub epsilon: f64,
    #[serde(default)]
    pub weight: WeightName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub horizon: f64,
    /// Time step of runs that do not involve the SPDE solver.
    pub dt: Option<f64>,
    pub tasks: Vec<Task>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seeds: Seeds,
    pub coefficients: Vec<CoefficientEntry>,
    pub vol: VolConfig,
    pub initial: InitialLaw,
    pub particles: Option<ParticleConfig>,
    pub solver: Option<SolverSection>,
    pub compare: Option<CompareConfig>,
    pub vol_density: Option<VolDensityConfig>,
    pub smooth_study: Option<SmoothStudyConfig>,
    pub energy: Option<EnergyConfig>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl Scenario {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {}", e.message().trim())))
    }

    /// Reads and parses a file; returns the raw bytes too, for hashing.
    pub fn load(path: &Path) -> CliResult<(Self, Vec<u8>)> {
        let raw = std::fs::read(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw)
            .map_err(|_| invalid(format!("{} is not UTF-8", path.display())))?;
        Ok((Self::parse(text)?, raw))
    }

    /// Requested tasks plus their prerequisites, in execution order.
    pub fn planned_tasks(&self) -> Vec<Task> {
        let mut t = self.tasks.clone();
        if t.contains(&Task::Compare) {
            t.extend([Task::Simulate, Task::Solve]);
        }
        if t.contains(&Task::EnergyResidual) {
            t.push(Task::Solve);
        }
        t.sort();
        t.dedup();
        t
    }

    pub fn has(&self, task: Task) -> bool {
        self.planned_tasks().contains(&task)
    }

    /// Whether the common-noise grid is the SPDE solver's time grid.
    pub fn noise_on_solver_grid(&self) -> bool {
        self.has(Task::Solve)
    }

    pub fn coefficient_vectors(&self) -> Vec<CoefficientVector> {
        self.coefficients.iter().map(CoefficientEntry::coefficients).collect()
    }

    /// Mixture weights, `[1]` for a single entry.
    pub fn weights(&self) -> Vec<f64> {
        if self.coefficients.len() == 1 {
            vec![self.coefficients[0].weight.unwrap_or(1.0)]
        } else {
            self.coefficients.iter().map(|c| c.weight.unwrap_or(f64::NAN)).collect()
        }
    }

    /// Every check that can be made without running anything.
    pub fn validate(&self) -> CliResult<()> {
        if self.name.trim().is_empty() {
            return Err(invalid("name must not be empty"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.tasks.is_empty() {
            return Err(invalid("tasks must not be empty"));
        }
        self.validate_model()?;
        self.validate_sections()?;
        self.validate_seeds()?;
        self.validate_time_grid()?;
        Ok(())
    }

    fn validate_model(&self) -> CliResult<()> {
        if self.coefficients.is_empty() {
            return Err(invalid("at least one [[coefficients]] entry is required"));
        }
        for (i, c) in self.coefficient_vectors().iter().enumerate() {
            c.validate().map_err(|e| invalid(format!("coefficients[{i}]: {e}")))?;
        }
        let w = self.weights();
        if self.coefficients.len() > 1 && self.coefficients.iter().any(|c| c.weight.is_none()) {
            return Err(invalid("every coefficients entry needs a weight when more than one is given"));
        }
        if w.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights must be non-negative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights must sum to 1 ± 1e-12, got {total}")));
        }
        self.vol.spec().map_err(|e| invalid(format!("vol: {e}")))?;
        self.initial.validate().map_err(|e| invalid(format!("initial: {e}")))?;
        if self.has(Task::Solve) {
            for (i, c) in self.coefficient_vectors().iter().enumerate() {
                if !check_correlation_condition(c) {
                    let (lhs, rhs) = correlation_condition_sides(c);
                    return Err(invalid(format!(
                        "coefficients[{i}]: correlation condition |rho - xi rho3 rho1 rho2| <= xi sqrt(1-rho1^2) sqrt(1-rho2^2) fails ({lhs:.6} > {rhs:.6}); \
                         the density equation is not known to have a unique solution, so the solve is refused"
                    )));
                }
            }
        }
        Ok(())
    }

    fn validate_sections(&self) -> CliResult<()> {
        let single = self.coefficients.len() == 1;
        if self.has(Task::Simulate) {
            let p = self.particles.as_ref().ok_or_else(|| invalid("simulate needs a [particles] section"))?;
            if p.n == 0 {
                return Err(invalid("particles.n must be positive"));
            }
            if p.x_edges.is_some() != p.y_edges.is_some() {
                return Err(invalid("particles.x_edges and particles.y_edges go together"));
            }
        }
        if self.has(Task::Solve) {
            let s = self.solver.as_ref().ok_or_else(|| invalid("solve needs a [solver] section"))?;
            let given = [s.x_max, s.y_min, s.y_max].iter().filter(|v| v.is_some()).count();
            if given != 0 && given != 3 {
                return Err(invalid("solver.x_max, y_min and y_max are given together or not at all"));
            }
            if !(s.dx > 0.0 && s.dy > 0.0 && s.cfl_safety > 0.0 && s.cfl_safety < 1.0) {
                return Err(invalid("solver needs dx > 0, dy > 0 and 0 < cfl_safety < 1"));
            }
        }
        if self.has(Task::VolDensity) {
            let v = self.vol_density.as_ref().ok_or_else(|| invalid("vol-density needs a [vol_density] section"))?;
            if !single {
                return Err(invalid("vol-density runs on a single coefficients entry"));
            }
            if v.n_inner < 2 {
                return Err(invalid("vol_density.n_inner must be at least 2"));
            }
            if let Some(t) = v.t {
                if !(t > 0.0 && t <= self.horizon) {
                    return Err(invalid(format!("vol_density.t must lie in (0, horizon], got {t}")));
                }
            }
        }
        if self.has(Task::SmoothStudy) {
            let s = self.smooth_study.as_ref().ok_or_else(|| invalid("smooth-study needs a [smooth_study] section"))?;
            if !single {
                return Err(invalid("smooth-study runs on a single coefficients entry"));
            }
            if s.epsilons.is_empty()
                || s.epsilons.iter().any(|e| !(*e > 0.0))
                || s.epsilons.windows(2).any(|w| !(w[1] < w[0]))
            {
                return Err(invalid("smooth_study.epsilons must be positive and strictly decreasing"));
            }
            if s.nz < 2 || s.ny < 2 || !(s.z_range[1] > s.z_range[0]) || !(s.y_range[1] > s.y_range[0]) {
                return Err(invalid("smooth_study grids need at least two points on an increasing range"));
            }
        }
        if self.has(Task::EnergyResidual) {
            let e = self.energy.as_ref().ok_or_else(|| invalid("energy-residual needs an [energy] section"))?;
            if !single {
                return Err(invalid("energy-residual runs on a single coefficients entry"));
            }
            if !(e.epsilon > 0.0) {
                return Err(invalid("energy.epsilon must be positive"));
            }
            if self.solver.map(|s| s.record_every) == Some(0) {
                return Err(invalid("energy-residual needs solver.record_every > 0"));
            }
        }
        Ok(())
    }

    fn validate_seeds(&self) -> CliResult<()> {
        let s = &self.seeds;
        let mut need: Vec<(&str, bool)> = Vec::new();
        if self.has(Task::Simulate) {
            need.extend([("noise", s.noise.is_some()), ("particles", s.particles.is_some()), ("initial", s.initial.is_some())]);
        }
        if self.has(Task::Solve) {
            need.push(("noise", s.noise.is_some()));
        }
        if self.has(Task::VolDensity) {
            need.extend([("noise", s.noise.is_some()), ("particles", s.particles.is_some())]);
        }
        if let Some((name, _)) = need.iter().find(|(_, ok)| !ok) {
            return Err(invalid(format!("seeds.{name} is required by the requested tasks")));
        }
        Ok(())
    }

    fn validate_time_grid(&self) -> CliResult<()> {
        if self.noise_on_solver_grid() {
            return Ok(());
        }
        if !(self.has(Task::Simulate) || self.has(Task::VolDensity)) {
            return Ok(());
        }
        let dt = self.dt.ok_or_else(|| invalid("dt is required when no solve task fixes the time grid"))?;
        steps_for(self.horizon, dt).map(|_| ())
    }
}

/// Number of steps of length `dt` in `horizon`, which must divide evenly.
pub fn steps_for(horizon: f64, dt: f64) -> CliResult<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon {
        return Err(invalid(format!("dt = {dt} does not divide the horizon {horizon}")));
    }
    Ok(n as usize)
}

/// `true` when `q` is constant, so Gaussian oracles apply.
pub fn is_constant_q(spec: &VolSpec) -> bool {
    matches!(spec.q, VolOfVol::Constant(_))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
horizon = 1.0
dt = 0.01
tasks = ["simulate"]

[seeds]
noise = 1
particles = 2
initial = 3

[[coefficients]]
k = 1.0
theta = 0.2
xi = 0.4
r = 0.05
rho1 = 0.3
rho2 = 0.2
rho3 = 0.5

[vol]
q = { kind = "constant", value = 1.0 }
h = { kind = "clamp-abs", min = 0.1, max = 0.5 }

[initial]
kind = "rayleigh-gaussian"
x_scale = 0.5
y_mean = 0.2
y_sd = 0.1

[particles]
n = 100
"#;

    #[test]
    fn minimal_config_validates() {
        let s = Scenario::parse(MINIMAL).unwrap();
        s.validate().unwrap();
        assert_eq!(s.planned_tasks(), vec![Task::Simulate]);
        assert_eq!(s.weights(), vec![1.0]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = MINIMAL.replace("n = 100", "n = 100\nnn = 3");
        let err = Scenario::parse(&text).unwrap_err();
        assert!(err.to_string().contains("nn"), "{err}");
        let text = MINIMAL.replace("rho3 = 0.5", "rho3 = 0.5\nrh04 = 0.1");
        assert!(Scenario::parse(&text).is_err());
    }

    #[test]
    fn invariant_violations_name_the_invariant() {
        let s = Scenario::parse(&MINIMAL.replace("rho1 = 0.3", "rho1 = 1.5")).unwrap();
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("rho1 ∈ (-1,1)"), "{msg}");
    }

    #[test]
    fn seeds_are_required_by_stochastic_tasks() {
        let s = Scenario::parse(&MINIMAL.replace("particles = 2\n", "")).unwrap();
        assert!(s.validate().unwrap_err().to_string().contains("seeds.particles"));
    }

    #[test]
    fn weights_must_sum_to_one() {
        let second = "\n[[coefficients]]\nk = 2.0\ntheta = 0.2\nxi = 0.4\nr = 0.05\nrho1 = 0.0\nrho2 = 0.0\nrho3 = 0.0\nweight = 0.5\n";
        let mut text = MINIMAL.replace("rho3 = 0.5\n", "rho3 = 0.5\nweight = 0.4\n");
        text.push_str(second);
        let s = Scenario::parse(&text).unwrap();
        assert!(s.validate().unwrap_err().to_string().contains("sum to 1"));
        let s = Scenario::parse(&text.replace("weight = 0.4", "weight = 0.5")).unwrap();
        s.validate().unwrap();
    }

    #[test]
    fn compare_pulls_in_its_inputs() {
        let mut s = Scenario::parse(MINIMAL).unwrap();
        s.tasks = vec![Task::Compare];
        assert_eq!(s.planned_tasks(), vec![Task::Simulate, Task::Solve, Task::Compare]);
        assert!(s.validate().unwrap_err().to_string().contains("[solver]"));
    }

    #[test]
    fn dt_must_divide_horizon() {
        assert_eq!(steps_for(1.0, 0.01).unwrap(), 100);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(1.0, 0.0).is_err());
    }
}
