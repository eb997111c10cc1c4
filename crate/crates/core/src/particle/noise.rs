//! Systemic Brownian increments shared by every particle and by the SPDE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Increments of the systemic pair `(W0, B0)` on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonNoisePath {
    pub dt: f64,
    pub n_steps: usize,
    pub increments_w0: Vec<f64>,
    pub increments_b0: Vec<f64>,
    pub seed: u64,
    pub rho3: f64,
}

impl CommonNoisePath {
    /// A path with all increments zero, for deterministic runs.
    pub fn zero(dt: f64, n_steps: usize) -> Self {
        CommonNoisePath {
            dt,
            n_steps,
            increments_w0: vec![0.0; n_steps],
            increments_b0: vec![0.0; n_steps],
            seed: 0,
            rho3: 0.0,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Grid times `0, dt, ..., n_steps·dt`.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| i as f64 * self.dt).collect()
    }

    /// Index of grid time `t`, or a domain error when `t` is off the grid.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let s = t / self.dt;
        let m = s.round();
        if !(m >= 0.0) || (s - m).abs() > 1e-6 || m as usize > self.n_steps {
            return Err(Error::Domain(format!(
                "t = {t} is not a point of the noise grid (dt = {}, {} steps)",
                self.dt, self.n_steps
            )));
        }
        Ok(m as usize)
    }

    /// Sums consecutive increments in blocks of `factor`, giving the same
    /// Brownian path on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(Error::Shape(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.n_steps
            )));
        }
        let sum = |v: &[f64]| v.chunks(factor).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Ok(CommonNoisePath {
            dt: self.dt * factor as f64,
            n_steps: self.n_steps / factor,
            increments_w0: sum(&self.increments_w0),
            increments_b0: sum(&self.increments_b0),
            seed: self.seed,
            rho3: self.rho3,
        })
    }
}

/// Draws `n_steps` increments of `(W0, B0)` with `Corr(ΔW0, ΔB0) = ρ₃`,
/// building `ΔB0 = ρ₃ΔW0 + √(1-ρ₃²)ΔZ` from an independent `ΔZ`.
///
/// Uses stream 0 of the seed; particle streams start at 1.
pub fn generate_common_noise(dt: f64, n_steps: usize, rho3: f64, seed: u64) -> Result<CommonNoisePath> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt > 0 violated: dt = {dt}")));
    }
    if !(rho3.abs() <= 1.0) {
        return Err(Error::InvalidParameter(format!("rho3 ∈ [-1,1] violated: rho3 = {rho3}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let sd = dt.sqrt();
    let perp = (1.0 - rho3 * rho3).sqrt();
    let mut w0 = Vec::with_capacity(n_steps);
    let mut b0 = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let a: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let dw = sd * a;
        w0.push(dw);
        b0.push(if perp == 0.0 { rho3 * dw } else { rho3 * dw + perp * sd * z });
    }
    Ok(CommonNoisePath { dt, n_steps, increments_w0: w0, increments_b0: b0, seed, rho3 })
}
