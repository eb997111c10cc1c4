//! Default-loss modelling for large credit portfolios with stochastic
//! volatility.
//!
//! Each asset's log distance to default follows a diffusion with volatility
//! `h(σ)`, where `σ` is a mean-reverting volatility process. Assets are
//! absorbed at zero and share two systemic Brownian motions. This crate
//! provides the finite particle system, a finite-difference solver for the
//! limiting stochastic density, the Lamperti/Malliavin machinery for the
//! volatility, kernel smoothing in the transformed coordinate, and
//! verification oracles.

pub mod error;
pub mod exec;
pub mod initial;
pub mod lamperti;
pub mod model;
pub mod particle;
pub mod quadrature;
pub mod smoothing;
pub mod spde;
pub mod verify;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use exec::Execution;
