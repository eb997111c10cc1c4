//! The finite portfolio: Euler-Maruyama stepping with absorption at zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::noise::CommonNoisePath;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CoefficientVector, VolSpec};

/// How a default inside a time step is detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Absorption {
    /// Default when `X` is non-positive at the end of a step.
    #[default]
    EndOfStep,
    /// Additionally kill survivors with the Brownian-bridge crossing
    /// probability `exp(-2 X_n X_{n+1} / (h² dt))`.
    BrownianBridge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub absorption: Absorption,
    /// Zero every idiosyncratic increment (deterministic-skeleton runs).
    pub zero_idiosyncratic: bool,
    /// Record a full state every this many steps; `0` records only the
    /// initial and final states. The loss is always recorded every step.
    pub record_every: usize,
    pub execution: Execution,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            absorption: Absorption::EndOfStep,
            zero_idiosyncratic: false,
            record_every: 0,
            execution: Execution::default(),
        }
    }
}

/// Portfolio state at one time, one entry per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub t: f64,
    pub x: Vec<f64>,
    pub sigma: Vec<f64>,
    pub alive: Vec<bool>,
    /// `+∞` for survivors.
    pub default_time: Vec<f64>,
}

impl PortfolioState {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn defaulted(&self) -> usize {
        self.alive.iter().filter(|a| !**a).count()
    }

    /// Fraction of defaulted assets.
    pub fn loss(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.defaulted() as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone)]
struct Slot {
    x: f64,
    sigma: f64,
    alive: bool,
    default_time: f64,
    rng: ChaCha8Rng,
}

/// The particle system, advanced one common-noise step at a time.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    params: Vec<CoefficientVector>,
    spec: VolSpec,
    slots: Vec<Slot>,
    t: f64,
    step: usize,
    options: SimOptions,
}

/// RNG of stream `index + 1` under `seed`; stream 0 belongs to the common noise.
pub(crate) fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

impl ParticleSystem {
    /// `params` holds one shared coefficient vector or one per particle.
    pub fn new(
        params: &[CoefficientVector],
        spec: &VolSpec,
        init: &[(f64, f64)],
        seed: u64,
        options: SimOptions,
    ) -> Result<Self> {
        if params.len() != 1 && params.len() != init.len() {
            return Err(Error::Shape(format!(
                "{} coefficient vectors for {} particles",
                params.len(),
                init.len()
            )));
        }
        for p in params {
            p.validate()?;
        }
        let slots = init
            .iter()
            .enumerate()
            .map(|(i, &(x, sigma))| {
                if !(x >= 0.0) || !sigma.is_finite() || !x.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "initial state of particle {i} must be finite with x >= 0, got ({x}, {sigma})"
                    )));
                }
                let alive = x > 0.0;
                Ok(Slot {
                    x,
                    sigma,
                    alive,
                    default_time: if alive { f64::INFINITY } else { 0.0 },
                    rng: particle_rng(seed, i),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleSystem {
            params: params.to_vec(),
            spec: spec.clone(),
            slots,
            t: 0.0,
            step: 0,
            options,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn defaulted(&self) -> usize {
        self.slots.iter().filter(|s| !s.alive).count()
    }

    /// Calls `f(x, σ)` for every surviving particle, in index order.
    pub fn for_each_survivor<F: FnMut(f64, f64)>(&self, mut f: F) {
        self.slots.iter().filter(|s| s.alive).for_each(|s| f(s.x, s.sigma));
    }

    pub fn state(&self) -> PortfolioState {
        PortfolioState {
            t: self.t,
            x: self.slots.iter().map(|s| s.x).collect(),
            sigma: self.slots.iter().map(|s| s.sigma).collect(),
            alive: self.slots.iter().map(|s| s.alive).collect(),
            default_time: self.slots.iter().map(|s| s.default_time).collect(),
        }
    }

    /// One Euler-Maruyama step of length `dt` driven by the common increments.
    pub fn advance(&mut self, dw0: f64, db0: f64, dt: f64) -> Result<()> {
        let t_next = self.t + dt;
        let step = self.step;
        let sd = dt.sqrt();
        let params = &self.params;
        let spec = &self.spec;
        let opts = self.options;
        opts.execution.try_for_each_mut(&mut self.slots, |i, s| {
            let c = if params.len() == 1 { &params[0] } else { &params[i] };
            // Both idiosyncratic normals are always drawn so each particle's
            // stream stays aligned with the step count whatever its status.
            let zw: f64 = s.rng.sample(StandardNormal);
            let zb: f64 = s.rng.sample(StandardNormal);
            let u: f64 = if opts.absorption == Absorption::BrownianBridge {
                s.rng.random()
            } else {
                1.0
            };
            let (dwi, dbi) = if opts.zero_idiosyncratic { (0.0, 0.0) } else { (sd * zw, sd * zb) };

            let q = spec.q.value(s.sigma);
            if s.alive {
                let h = spec.h.value(s.sigma);
                let dx = (c.r - 0.5 * h * h) * dt
                    + h * ((1.0 - c.rho1 * c.rho1).sqrt() * dwi + c.rho1 * dw0);
                let x_next = s.x + dx;
                if !x_next.is_finite() {
                    return Err(Error::Divergence {
                        step,
                        what: format!("particle {i}: X = {x_next}"),
                    });
                }
                let crossed = x_next <= 0.0
                    || (opts.absorption == Absorption::BrownianBridge
                        && u < (-2.0 * s.x * x_next / (h * h * dt)).exp());
                if crossed {
                    s.alive = false;
                    s.x = 0.0;
                    s.default_time = t_next;
                } else {
                    s.x = x_next;
                }
            }
            let sigma_next = s.sigma
                + c.k * (c.theta - s.sigma) * dt
                + c.xi * q * ((1.0 - c.rho2 * c.rho2).sqrt() * dbi + c.rho2 * db0);
            if !sigma_next.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("particle {i}: sigma = {sigma_next}"),
                });
            }
            s.sigma = sigma_next;
            Ok(())
        })?;
        self.t = t_next;
        self.step += 1;
        Ok(())
    }
}

/// Output of [`simulate_portfolio`].
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioRun {
    /// Grid times `0, dt, ..., T`.
    pub times: Vec<f64>,
    /// Loss at every grid time.
    pub loss: Vec<f64>,
    /// States at the recorded times (always including the first and last).
    pub states: Vec<PortfolioState>,
}

/// Simulates the portfolio over the whole common-noise path.
pub fn simulate_portfolio(
    params: &[CoefficientVector],
    spec: &VolSpec,
    init: &[(f64, f64)],
    noise: &CommonNoisePath,
    seed: u64,
    options: SimOptions,
) -> Result<PortfolioRun> {
    let mut sys = ParticleSystem::new(params, spec, init, seed, options)?;
    let n = sys.len().max(1) as f64;
    let mut times = Vec::with_capacity(noise.n_steps + 1);
    let mut loss = Vec::with_capacity(noise.n_steps + 1);
    let mut states = vec![sys.state()];
    times.push(0.0);
    loss.push(sys.defaulted() as f64 / n);
    for step in 0..noise.n_steps {
        sys.advance(noise.increments_w0[step], noise.increments_b0[step], noise.dt)?;
        // Grid times are multiples of dt, not accumulated sums.
        let t = (step + 1) as f64 * noise.dt;
        sys.t = t;
        times.push(t);
        loss.push(sys.defaulted() as f64 / n);
        let last = step + 1 == noise.n_steps;
        let every = options.record_every;
        if last || (every > 0 && (step + 1) % every == 0) {
            states.push(sys.state());
        }
    }
    Ok(PortfolioRun { times, loss, states })
}

/// Fraction of defaulted assets at each recorded state.
pub fn loss_process(states: &[PortfolioState]) -> Vec<f64> {
    states.iter().map(PortfolioState::loss).collect()
}

/// Loss and a survivor histogram at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSnapshot {
    pub t: f64,
    pub loss: f64,
    pub n_particles: usize,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// Row-major counts, `counts[i * (y_edges.len() - 1) + j]` for x-bin `i`
    /// and y-bin `j`. Survivors outside the edges land in the edge bins.
    pub counts: Vec<u64>,
}

impl EmpiricalSnapshot {
    pub fn new(state: &PortfolioState, x_edges: &[f64], y_edges: &[f64]) -> Result<Self> {
        for (name, e) in [("x", x_edges), ("y", y_edges)] {
            if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Input(format!("{name} bin edges must be increasing, at least two")));
            }
        }
        let nx = x_edges.len() - 1;
        let ny = y_edges.len() - 1;
        let mut counts = vec![0u64; nx * ny];
        let bin = |edges: &[f64], v: f64| -> usize {
            let p = edges.partition_point(|&e| e <= v);
            p.saturating_sub(1).min(edges.len() - 2)
        };
        for i in 0..state.len() {
            if state.alive[i] {
                counts[bin(x_edges, state.x[i]) * ny + bin(y_edges, state.sigma[i])] += 1;
            }
        }
        Ok(EmpiricalSnapshot {
            t: state.t,
            loss: state.loss(),
            n_particles: state.len(),
            x_edges: x_edges.to_vec(),
            y_edges: y_edges.to_vec(),
            counts,
        })
    }

    pub fn survivors(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolMap;
    use crate::particle::noise::generate_common_noise;
    use proptest::prelude::*;

    fn flat_spec(h: f64) -> VolSpec {
        VolSpec::ornstein_uhlenbeck(1.0, 0.3).unwrap().with_h(VolMap::Constant(h)).unwrap()
    }

    #[test]
    fn deterministic_skeleton_is_a_straight_line() {
        let c = CoefficientVector::standard(0.0, 0.3, 0.0, 0.1, 0.0, 0.0, 0.0);
        let noise = generate_common_noise(0.01, 100, 0.0, 1).unwrap();
        let opts = SimOptions { zero_idiosyncratic: true, record_every: 1, ..Default::default() };
        let run = simulate_portfolio(&[c], &flat_spec(0.3), &[(0.5, 0.3)], &noise, 7, opts).unwrap();
        let mu = 0.1 - 0.045;
        for s in &run.states {
            assert!((s.x[0] - (0.5 + mu * s.t)).abs() < 1e-12);
            assert!(s.alive[0]);
        }
        assert!(run.loss.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn zero_start_is_absorbed_at_time_zero() {
        let c = CoefficientVector::standard(1.0, 0.3, 0.4, 0.05, 0.0, 0.0, 0.0);
        let noise = generate_common_noise(0.01, 10, 0.0, 1).unwrap();
        let run = simulate_portfolio(
            &[c],
            &flat_spec(0.3),
            &[(0.0, 0.3), (1.0, 0.3)],
            &noise,
            1,
            SimOptions::default(),
        )
        .unwrap();
        assert_eq!(run.loss[0], 0.5);
        assert_eq!(run.states[0].default_time[0], 0.0);
        assert!(ParticleSystem::new(&[c], &flat_spec(0.3), &[(-0.1, 0.3)], 1, SimOptions::default()).is_err());
    }

    #[test]
    fn divergence_names_particle_and_step() {
        let c = CoefficientVector::standard(1.0, 0.3, 0.4, 0.05, 0.0, 0.0, 0.0);
        let spec = VolSpec::new(
            crate::model::VolOfVol::Constant(1.0),
            VolMap::custom(|y: f64| if y > 1e3 { f64::NAN } else { 0.3 }),
            (1.0, 1.0),
            (0.3, 0.3),
            0.0,
        )
        .unwrap();
        let noise = generate_common_noise(0.01, 5, 0.0, 1).unwrap();
        let err = simulate_portfolio(&[c], &spec, &[(1.0, 0.3), (1.0, 2e3)], &noise, 1, SimOptions::default())
            .unwrap_err();
        match err {
            Error::Divergence { step, what } => {
                assert_eq!(step, 0);
                assert!(what.contains("particle 1"), "{what}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn volatility_follows_the_ode_when_xi_is_zero() {
        let c = CoefficientVector::standard(2.0, 0.2, 0.0, 0.05, 0.0, 0.0, 0.0);
        let noise = generate_common_noise(1e-3, 1000, 0.0, 2).unwrap();
        let run = simulate_portfolio(&[c], &flat_spec(0.3), &[(5.0, 0.6)], &noise, 3, SimOptions::default())
            .unwrap();
        let s = run.states.last().unwrap().sigma[0];
        let exact = 0.2 + 0.4 * (-2.0f64).exp();
        assert!((s - exact).abs() < 2e-3 * 0.4, "{s} vs {exact}");
    }

    #[test]
    fn volatility_keeps_evolving_after_default() {
        let c = CoefficientVector::standard(2.0, 0.2, 0.0, 0.05, 0.0, 0.0, 0.0);
        let noise = generate_common_noise(0.01, 100, 0.0, 2).unwrap();
        let run = simulate_portfolio(&[c], &flat_spec(0.3), &[(0.0, 0.6)], &noise, 3, SimOptions::default())
            .unwrap();
        let last = run.states.last().unwrap();
        assert!(!last.alive[0]);
        assert!(last.sigma[0] < 0.3);
    }

    #[test]
    fn snapshot_accounts_for_everyone() {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.0, 0.3, 0.2, 0.5);
        let noise = generate_common_noise(0.01, 100, 0.5, 4).unwrap();
        let init: Vec<(f64, f64)> = (0..500).map(|i| (0.05 + 0.001 * i as f64, 0.2)).collect();
        let run = simulate_portfolio(&[c], &flat_spec(0.3), &init, &noise, 5, SimOptions::default()).unwrap();
        let last = run.states.last().unwrap();
        let snap = EmpiricalSnapshot::new(last, &[0.0, 0.2, 0.4], &[0.0, 0.1, 0.3]).unwrap();
        assert_eq!(snap.survivors() as usize + last.defaulted(), 500);
        assert!(snap.loss > 0.0);
        assert!(EmpiricalSnapshot::new(last, &[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn results_do_not_depend_on_execution() {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.0, 0.3, 0.2, 0.5);
        let noise = generate_common_noise(0.01, 50, 0.5, 4).unwrap();
        let init: Vec<(f64, f64)> = (0..300).map(|i| (0.02 + 0.002 * i as f64, 0.2)).collect();
        let spec = VolSpec::rational(VolMap::ClampAbs { min: 0.1, max: 0.5 }).unwrap();
        let mut runs = Vec::new();
        for execution in [Execution::Sequential, Execution::default()] {
            for absorption in [Absorption::EndOfStep, Absorption::BrownianBridge] {
                let opts = SimOptions { absorption, record_every: 10, execution, ..Default::default() };
                runs.push(simulate_portfolio(&[c], &spec, &init, &noise, 9, opts).unwrap());
            }
        }
        assert_eq!(runs[0], runs[2]);
        assert_eq!(runs[1], runs[3]);
        // The bridge correction only ever adds defaults.
        assert!(runs[1].loss.iter().zip(&runs[0].loss).all(|(b, e)| b >= e));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn loss_is_monotone_and_bounded(seed in 0u64..10_000, rho1 in -0.9f64..0.9, bridge in any::<bool>()) {
            let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.0, rho1, 0.2, 0.5);
            let noise = generate_common_noise(0.01, 60, 0.5, seed).unwrap();
            let init: Vec<(f64, f64)> = (0..100).map(|i| (0.01 * (i + 1) as f64, 0.25)).collect();
            let absorption = if bridge { Absorption::BrownianBridge } else { Absorption::EndOfStep };
            let opts = SimOptions { absorption, record_every: 7, ..Default::default() };
            let run = simulate_portfolio(&[c], &flat_spec(0.4), &init, &noise, seed, opts).unwrap();
            prop_assert!(run.loss.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(run.loss.iter().all(|&l| (0.0..=1.0).contains(&l)));
            for s in &run.states {
                for i in 0..s.len() {
                    if s.alive[i] {
                        prop_assert!(s.x[i] > 0.0 && s.default_time[i].is_infinite());
                    } else {
                        prop_assert!(s.x[i] == 0.0 && s.default_time[i] <= s.t + 1e-12);
                    }
                }
            }
            let lp = loss_process(&run.states);
            prop_assert!(lp.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}
