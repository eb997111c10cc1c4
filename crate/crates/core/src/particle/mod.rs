//! The finite particle system and Monte Carlo studies built on it.

pub mod noise;
pub mod portfolio;
pub mod volatility;

pub use noise::{generate_common_noise, CommonNoisePath};
pub use portfolio::{
    loss_process, simulate_portfolio, Absorption, EmpiricalSnapshot, ParticleSystem, PortfolioRun,
    PortfolioState, SimOptions,
};
pub use volatility::{
    conditional_vol_density, conditional_vol_samples, gaussian_kde, silverman_bandwidth, sup_moment,
    MomentEstimate, VolDensity,
};
