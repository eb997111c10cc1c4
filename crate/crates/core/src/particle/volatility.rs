//! Monte Carlo studies of the volatility process alone: its law given the
//! systemic path, and running-maximum moments.

use rand::Rng;
use rand_distr::StandardNormal;

use super::noise::CommonNoisePath;
use super::portfolio::particle_rng;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{CoefficientVector, VolSpec};

/// A Gaussian-kernel density estimate on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VolDensity {
    pub y: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub n_samples: usize,
    pub sample_mean: f64,
    pub sample_variance: f64,
}

impl VolDensity {
    pub fn spacing(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    /// Trapezoid integral of the estimate.
    pub fn mass(&self) -> f64 {
        let h = self.spacing();
        let n = self.density.len();
        h * (self.density.iter().sum::<f64>() - 0.5 * (self.density[0] + self.density[n - 1]))
    }

    pub fn sup(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }
}

/// Silverman's rule-of-thumb bandwidth `1.06 s n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Gaussian KDE of `samples` on a grid reaching `8·bandwidth` past the
/// extreme samples, with spacing at most `bandwidth / 4`.
pub fn gaussian_kde(samples: &[f64], bandwidth: f64, execution: Execution) -> Result<VolDensity> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if samples.len() < 2 {
        return Err(Error::Degenerate("need at least two samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let lo = sorted[0] - 8.0 * bandwidth;
    let hi = sorted[n - 1] + 8.0 * bandwidth;
    let cells = ((hi - lo) / (0.25 * bandwidth)).ceil().max(2.0) as usize;
    let h = (hi - lo) / cells as f64;
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 8.0 * bandwidth;
    let density = execution.map_range(cells + 1, |j| {
        let y = lo + j as f64 * h;
        let a = sorted.partition_point(|&s| s < y - reach);
        let b = sorted.partition_point(|&s| s <= y + reach);
        let sum: f64 = sorted[a..b]
            .iter()
            .map(|&s| {
                let z = (y - s) / bandwidth;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum * norm
    });
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
    Ok(VolDensity {
        y: (0..=cells).map(|j| lo + j as f64 * h).collect(),
        density,
        bandwidth,
        n_samples: n,
        sample_mean: mean,
        sample_variance: var,
    })
}

/// Samples of `σ_t` given the frozen systemic path: `n_inner` independent
/// idiosyncratic paths, Euler-Maruyama on the noise grid.
pub fn conditional_vol_samples(
    c: &CoefficientVector,
    spec: &VolSpec,
    sigma0: f64,
    noise: &CommonNoisePath,
    t: f64,
    n_inner: usize,
    seed: u64,
    execution: Execution,
) -> Result<Vec<f64>> {
    c.validate()?;
    let steps = noise.step_index(t)?;
    let dt = noise.dt;
    let sd = dt.sqrt();
    let perp = (1.0 - c.rho2 * c.rho2).sqrt();
    let samples = execution.map_range(n_inner, |i| {
        let mut rng = particle_rng(seed, i);
        let mut s = sigma0;
        for db0 in &noise.increments_b0[..steps] {
            let z: f64 = rng.sample(StandardNormal);
            s += c.k * (c.theta - s) * dt + c.xi * spec.q.value(s) * (perp * sd * z + c.rho2 * db0);
        }
        s
    });
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::Divergence { step: steps, what: format!("inner path {i}") });
    }
    Ok(samples)
}

/// Density of `σ_t` conditional on the systemic path, estimated with a
/// Gaussian kernel of the given bandwidth.
#[allow(clippy::too_many_arguments)]
pub fn conditional_vol_density(
    c: &CoefficientVector,
    spec: &VolSpec,
    sigma0: f64,
    noise: &CommonNoisePath,
    t: f64,
    n_inner: usize,
    bandwidth: f64,
    seed: u64,
    execution: Execution,
) -> Result<VolDensity> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if n_inner < 2 {
        return Err(Error::InvalidParameter(format!("n_inner must be at least 2, got {n_inner}")));
    }
    let samples = conditional_vol_samples(c, spec, sigma0, noise, t, n_inner, seed, execution)?;
    gaussian_kde(&samples, bandwidth, execution)
}

/// Monte Carlo estimate of `E[sup_{t<=T} |σ_t|^p]` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Estimates `E[sup_{t<=T} |σ_t|^p]` from `n_paths` full volatility paths.
///
/// Each path uses its own particle stream, so the first `n` paths of a run
/// with more paths are exactly the paths of a run with `n`.
#[allow(clippy::too_many_arguments)]
pub fn sup_moment(
    c: &CoefficientVector,
    spec: &VolSpec,
    sigma0: f64,
    dt: f64,
    n_steps: usize,
    power: f64,
    n_paths: usize,
    seed: u64,
    execution: Execution,
) -> Result<MomentEstimate> {
    c.validate()?;
    if !(dt > 0.0) || n_paths < 2 {
        return Err(Error::InvalidParameter("need dt > 0 and at least two paths".into()));
    }
    let sd = dt.sqrt();
    let values = execution.map_range(n_paths, |i| {
        let mut rng = particle_rng(seed, i);
        let mut s = sigma0;
        let mut sup = s.abs();
        for _ in 0..n_steps {
            let z: f64 = rng.sample(StandardNormal);
            s += c.k * (c.theta - s) * dt + c.xi * spec.q.value(s) * sd * z;
            sup = sup.max(s.abs());
        }
        sup.powf(power)
    });
    let n = n_paths as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    if !mean.is_finite() {
        return Err(Error::Divergence { step: n_steps, what: "running maximum moment".into() });
    }
    Ok(MomentEstimate { mean, std_error: (var / n).sqrt(), n_paths })
}
