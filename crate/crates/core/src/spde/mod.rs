//! Finite-difference solver for the density of the surviving mass.

pub mod grid;
pub mod io;
pub mod solver;

pub use grid::{survival_mass, DensityGrid, SurvivalMass};
pub use solver::{mixture_loss, stable_dt, Scheme, SolutionSeries, SolverConfig, SpdeSolver};
