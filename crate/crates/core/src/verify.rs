//! Analytic oracles and comparison routines linking the particle system,
//! the SPDE solver and the volatility analytics.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, VolOfVol, VolSpec};
use crate::particle::{CommonNoisePath, ParticleSystem, PortfolioState, SimOptions};
use crate::spde::DensityGrid;

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(T <= t)` for `T` the first hitting time of zero by `x0 + μs + σ̄B_s`:
///
/// ```text
/// Φ((-x0 - μt)/(σ̄√t)) + exp(-2μx0/σ̄²) Φ((-x0 + μt)/(σ̄√t))
/// ```
pub fn first_passage_oracle(x0: f64, mu: f64, sigma_bar: f64, t: f64) -> Result<f64> {
    if !(x0 > 0.0 && sigma_bar > 0.0 && t >= 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!(
            "first passage needs x0 > 0, sigma > 0, t >= 0; got ({x0}, {sigma_bar}, {t})"
        )));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let s = sigma_bar * t.sqrt();
    let a = normal_cdf((-x0 - mu * t) / s);
    let b = normal_cdf((-x0 + mu * t) / s);
    // Multiply in log space so a large exponent meets a tiny CDF safely.
    let tail = if b > 0.0 { (-2.0 * mu * x0 / (sigma_bar * sigma_bar) + b.ln()).exp() } else { 0.0 };
    Ok((a + tail).min(1.0))
}

/// Mean and variance of `σ_t` given the systemic path when `q` is a
/// constant `q0` (the Ornstein-Uhlenbeck case). The stochastic integral
/// `∫ e^{-k(t-s)} dB0_s` is a left-point sum over the noise grid.
pub fn ou_conditional_density_oracle(
    c: &CoefficientVector,
    spec: &VolSpec,
    sigma0: f64,
    noise: &CommonNoisePath,
    t: f64,
) -> Result<(f64, f64)> {
    let q0 = match spec.q {
        VolOfVol::Constant(q0) => q0,
        _ => return Err(Error::Scenario("the Gaussian oracle needs a constant q".into())),
    };
    let m = noise.step_index(t)?;
    let k = c.k;
    let forced: f64 = noise.increments_b0[..m]
        .iter()
        .enumerate()
        .map(|(i, db)| (-k * (t - i as f64 * noise.dt)).exp() * db)
        .sum();
    let mean = c.theta + (sigma0 - c.theta) * (-k * t).exp() + c.xi * q0 * c.rho2 * forced;
    let spread = if k > 0.0 { (1.0 - (-2.0 * k * t).exp()) / (2.0 * k) } else { t };
    let variance = (c.xi * q0).powi(2) * (1.0 - c.rho2 * c.rho2) * spread;
    Ok((mean, variance))
}

/// Outcome of a single numeric check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub metric: String,
    pub observed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl ComparisonReport {
    pub fn new(scenario: &str, metric: &str, observed: f64, reference: f64, tolerance: f64) -> Self {
        ComparisonReport {
            scenario: scenario.to_string(),
            metric: metric.to_string(),
            observed,
            reference,
            tolerance,
            passed: (observed - reference).abs() <= tolerance,
        }
    }
}

/// Sup-norm distance between two loss curves on the same time grid.
pub fn compare_loss_curves(
    scenario: &str,
    times_a: &[f64],
    particle: &[f64],
    times_b: &[f64],
    spde: &[f64],
    tolerance: f64,
) -> Result<ComparisonReport> {
    if times_a.len() != particle.len() || times_b.len() != spde.len() || times_a.len() != times_b.len() {
        return Err(Error::Shape(format!(
            "loss curves have {} and {} points",
            particle.len(),
            spde.len()
        )));
    }
    if times_a.iter().zip(times_b).any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs())) {
        return Err(Error::Shape("loss curves are on different time grids".into()));
    }
    let sup = particle.iter().zip(spde).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(ComparisonReport::new(scenario, "sup |L_particle - L_spde|", sup, 0.0, tolerance))
}

/// A test function with the derivatives the generator needs.
pub trait TestFunction: Sync {
    /// `[f, f_x, f_y, f_xx, f_yy, f_xy]` at `(x, y)`.
    fn eval(&self, x: f64, y: f64) -> [f64; 6];
}

/// `f(x, y) = (1 - e^{-x}) e^{-y²}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecayingBump;

impl TestFunction for DecayingBump {
    fn eval(&self, x: f64, y: f64) -> [f64; 6] {
        let ex = (-x).exp();
        let gy = (-y * y).exp();
        let gy1 = -2.0 * y * gy;
        let gy2 = (4.0 * y * y - 2.0) * gy;
        [(1.0 - ex) * gy, ex * gy, (1.0 - ex) * gy1, -ex * gy, (1.0 - ex) * gy2, ex * gy1]
    }
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFunction;

impl TestFunction for ZeroFunction {
    fn eval(&self, _: f64, _: f64) -> [f64; 6] {
        [0.0; 6]
    }
}

impl<F: Fn(f64, f64) -> [f64; 6] + Sync> TestFunction for F {
    fn eval(&self, x: f64, y: f64) -> [f64; 6] {
        self(x, y)
    }
}

/// Checks `f(0, y) = 0` on a probe grid in `y`.
pub fn check_test_function(f: &dyn TestFunction) -> Result<()> {
    for i in 0..=200 {
        let y = -10.0 + 0.1 * i as f64;
        let v = f.eval(0.0, y)[0];
        if v.abs() > 1e-12 {
            return Err(Error::TestFunction(format!("f(0, {y}) = {v} but must vanish at x = 0")));
        }
    }
    Ok(())
}

/// Terms of the weak-form identity for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakFormResidual {
    /// `⟨v_T, f⟩ - ⟨v_0, f⟩ - ∫⟨v_s, Af⟩ds - ρ₁∫⟨v_s, h f_x⟩dW0 - ξρ₂∫⟨v_s, q f_y⟩dB0`.
    pub signed: f64,
    pub initial: f64,
    pub terminal: f64,
    pub drift: f64,
    pub w0_integral: f64,
    pub b0_integral: f64,
}

impl WeakFormResidual {
    pub fn abs(&self) -> f64 {
        self.signed.abs()
    }
}

/// Streaming evaluation of the weak-form residual, fed with the survivor
/// states at every step (left-point sums).
pub struct WeakFormAccumulator<'a> {
    c: CoefficientVector,
    spec: &'a VolSpec,
    f: &'a dyn TestFunction,
    n: f64,
    initial: Option<f64>,
    drift: f64,
    w0: f64,
    b0: f64,
}

impl<'a> WeakFormAccumulator<'a> {
    pub fn new(
        c: &CoefficientVector,
        spec: &'a VolSpec,
        f: &'a dyn TestFunction,
        n_particles: usize,
    ) -> Result<Self> {
        check_test_function(f)?;
        if n_particles == 0 {
            return Err(Error::Input("empty portfolio".into()));
        }
        Ok(WeakFormAccumulator {
            c: *c,
            spec,
            f,
            n: n_particles as f64,
            initial: None,
            drift: 0.0,
            w0: 0.0,
            b0: 0.0,
        })
    }

    /// `[⟨v, f⟩, ⟨v, Af⟩, ⟨v, h f_x⟩, ⟨v, q f_y⟩]` over the survivors given.
    pub fn pairings<I: IntoIterator<Item = (f64, f64)>>(&self, survivors: I) -> [f64; 4] {
        let c = &self.c;
        let cross = c.xi * c.rho3 * c.rho1 * c.rho2;
        let mut s = [0.0; 4];
        for (x, y) in survivors {
            let [f, fx, fy, fxx, fyy, fxy] = self.f.eval(x, y);
            let h = self.spec.h.value(y);
            let q = self.spec.q.value(y);
            let af = (c.r - 0.5 * h * h) * fx
                + c.k * (c.theta - y) * fy
                + 0.5 * h * h * fxx
                + 0.5 * c.xi * c.xi * q * q * fyy
                + cross * h * q * fxy;
            s[0] += f;
            s[1] += af;
            s[2] += h * fx;
            s[3] += q * fy;
        }
        s.map(|v| v / self.n)
    }

    /// Adds the contribution of one step, using the state at its start.
    pub fn step<I: IntoIterator<Item = (f64, f64)>>(&mut self, survivors: I, dw0: f64, db0: f64, dt: f64) {
        let [f, af, hfx, qfy] = self.pairings(survivors);
        if self.initial.is_none() {
            self.initial = Some(f);
        }
        self.drift += af * dt;
        self.w0 += hfx * dw0;
        self.b0 += qfy * db0;
    }

    pub fn finish<I: IntoIterator<Item = (f64, f64)>>(self, survivors: I) -> WeakFormResidual {
        let terminal = self.pairings(survivors)[0];
        let initial = self.initial.unwrap_or(terminal);
        let w0_integral = self.c.rho1 * self.w0;
        let b0_integral = self.c.xi * self.c.rho2 * self.b0;
        WeakFormResidual {
            signed: terminal - initial - self.drift - w0_integral - b0_integral,
            initial,
            terminal,
            drift: self.drift,
            w0_integral,
            b0_integral,
        }
    }
}

fn survivors(s: &PortfolioState) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..s.len()).filter(|&i| s.alive[i]).map(move |i| (s.x[i], s.sigma[i]))
}

/// Weak-form residual from states recorded at every step of `noise`.
pub fn weak_form_residual(
    states: &[PortfolioState],
    c: &CoefficientVector,
    spec: &VolSpec,
    noise: &CommonNoisePath,
    f: &dyn TestFunction,
) -> Result<WeakFormResidual> {
    if states.len() != noise.n_steps + 1 {
        return Err(Error::Shape(format!(
            "{} states for {} noise steps; record every step",
            states.len(),
            noise.n_steps
        )));
    }
    let mut acc = WeakFormAccumulator::new(c, spec, f, states[0].len())?;
    for (n, s) in states[..noise.n_steps].iter().enumerate() {
        acc.step(survivors(s), noise.increments_w0[n], noise.increments_b0[n], noise.dt);
    }
    Ok(acc.finish(survivors(&states[noise.n_steps])))
}

/// Simulates the portfolio and accumulates the weak-form residual on the
/// fly, without storing states.
pub fn weak_form_run(
    c: &CoefficientVector,
    spec: &VolSpec,
    init: &[(f64, f64)],
    noise: &CommonNoisePath,
    seed: u64,
    f: &dyn TestFunction,
    options: SimOptions,
) -> Result<WeakFormResidual> {
    let mut sys = ParticleSystem::new(std::slice::from_ref(c), spec, init, seed, options)?;
    let mut acc = WeakFormAccumulator::new(c, spec, f, init.len())?;
    let mut buf = Vec::with_capacity(init.len());
    for n in 0..noise.n_steps {
        buf.clear();
        sys.for_each_survivor(|x, y| buf.push((x, y)));
        acc.step(buf.iter().copied(), noise.increments_w0[n], noise.increments_b0[n], noise.dt);
        sys.advance(noise.increments_w0[n], noise.increments_b0[n], noise.dt)?;
    }
    buf.clear();
    sys.for_each_survivor(|x, y| buf.push((x, y)));
    Ok(acc.finish(buf.iter().copied()))
}

/// `∫∫ |y|^α u² dx dy` by the trapezoid rule.
pub fn alpha_moment_diagnostic(grid: &DensityGrid, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(grid.integrate(|_, y, u| if alpha == 0.0 { u * u } else { y.abs().powf(alpha) * u * u }))
}

/// Mean and standard error of a sample.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
