//! Initial laws of `(x, σ)` shared by the particle system and the SPDE:
//! the same law can be sampled for particles and evaluated as a density.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Product laws `p(x) · N(y; mean, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    /// Rayleigh in `x` with scale `x_scale`: `x/s² · exp(-x²/(2s²))`.
    /// Vanishes at `x = 0`, so it is compatible with absorption there.
    RayleighGaussian { x_scale: f64, y_mean: f64, y_sd: f64 },
    /// Every particle at `x0`; as a density, a hat of half width
    /// `half_width` around `x0`.
    Point { x0: f64, y0: f64, y_sd: f64, half_width: f64 },
}

impl InitialLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitialLaw::RayleighGaussian { x_scale, y_mean, y_sd } => {
                x_scale > 0.0 && y_sd >= 0.0 && y_mean.is_finite() && x_scale.is_finite()
            }
            InitialLaw::Point { x0, y0, y_sd, half_width } => {
                x0 >= 0.0 && y_sd >= 0.0 && half_width > 0.0 && y0.is_finite() && x0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("initial law {self:?} is not well formed")))
        }
    }

    /// Mean of the `x` marginal.
    pub fn mean_x(&self) -> f64 {
        match *self {
            InitialLaw::RayleighGaussian { x_scale, .. } => x_scale * (std::f64::consts::PI / 2.0).sqrt(),
            InitialLaw::Point { x0, .. } => x0,
        }
    }

    /// Density at `(x, y)`. With `y_sd = 0` the `y` factor is an indicator
    /// of the grid row within `dy / 2` of the mean, so the caller passes
    /// the row spacing.
    pub fn density(&self, x: f64, y: f64, dy: f64) -> f64 {
        let gauss = |m: f64, sd: f64| {
            if sd > 0.0 {
                let z = (y - m) / sd;
                (-0.5 * z * z).exp() / (sd * SQRT_2PI)
            } else if (y - m).abs() < 0.5 * dy {
                1.0
            } else {
                0.0
            }
        };
        match *self {
            InitialLaw::RayleighGaussian { x_scale, y_mean, y_sd } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let s2 = x_scale * x_scale;
                x / s2 * (-0.5 * x * x / s2).exp() * gauss(y_mean, y_sd)
            }
            InitialLaw::Point { x0, y0, y_sd, half_width } => {
                (half_width - (x - x0).abs()).max(0.0) * gauss(y0, y_sd)
            }
        }
    }

    /// `n` independent draws from stream 0 of `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                match *self {
                    InitialLaw::RayleighGaussian { x_scale, y_mean, y_sd } => {
                        let u: f64 = rng.random();
                        // 1 - u lies in (0, 1], so the logarithm is finite.
                        (x_scale * (-2.0 * (1.0 - u).ln()).sqrt(), y_mean + y_sd * z)
                    }
                    InitialLaw::Point { x0, y0, y_sd, .. } => (x0, y0 + y_sd * z),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;

    #[test]
    fn rayleigh_density_integrates_to_one() {
        let law = InitialLaw::RayleighGaussian { x_scale: 0.5, y_mean: 0.2, y_sd: 0.1 };
        let fx = |x: f64| law.density(x, 0.2, 0.0);
        let mass_x = adaptive_simpson(&fx, 0.0, 10.0, 1e-12) * 0.1 * SQRT_2PI;
        assert!((mass_x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn samples_match_the_law() {
        let law = InitialLaw::RayleighGaussian { x_scale: 0.5, y_mean: 0.2, y_sd: 0.1 };
        let s = law.sample(200_000, 3);
        let mx = s.iter().map(|p| p.0).sum::<f64>() / s.len() as f64;
        let my = s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
        assert!((mx - law.mean_x()).abs() < 0.005);
        assert!((my - 0.2).abs() < 0.002);
        assert!(s.iter().all(|p| p.0 > 0.0));
        assert_eq!(s, law.sample(200_000, 3));
    }

    #[test]
    fn point_law() {
        let law = InitialLaw::Point { x0: 0.5, y0: 0.3, y_sd: 0.0, half_width: 0.01 };
        assert!(law.sample(10, 1).iter().all(|&p| p == (0.5, 0.3)));
        assert_eq!(law.density(0.5, 0.3, 0.1), 0.01);
        assert_eq!(law.density(0.5, 0.5, 0.1), 0.0);
        assert!(InitialLaw::Point { x0: -1.0, y0: 0.0, y_sd: 0.0, half_width: 0.1 }.validate().is_err());
    }
}
