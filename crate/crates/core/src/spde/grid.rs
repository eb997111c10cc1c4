//! Density values on the truncated half-plane `[0, X_max] × [y_min, y_max]`.

use crate::error::{Error, Result};
use crate::quadrature::uniform_trapezoid_weights;

/// Values `u(x_j, y_k)` on a uniform grid, stored row-major in `x`:
/// `values[j * ny + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub t: f64,
    pub dx: f64,
    pub nx: usize,
    pub y_min: f64,
    pub dy: f64,
    pub ny: usize,
    pub values: Vec<f64>,
}

/// Total mass and the implied loss `1 - mass`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalMass {
    pub mass: f64,
    pub loss: f64,
}

impl DensityGrid {
    pub fn zeros(dx: f64, nx: usize, y_min: f64, dy: f64, ny: usize) -> Self {
        DensityGrid { t: 0.0, dx, nx, y_min, dy, ny, values: vec![0.0; nx * ny] }
    }

    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx
    }

    pub fn y(&self, k: usize) -> f64 {
        self.y_min + k as f64 * self.dy
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }

    pub fn y_nodes(&self) -> Vec<f64> {
        (0..self.ny).map(|k| self.y(k)).collect()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.ny + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.values[j * self.ny + k] = v;
    }

    /// True when both grids share the same nodes.
    pub fn same_layout(&self, other: &DensityGrid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.dx == other.dx
            && self.dy == other.dy
            && self.y_min == other.y_min
    }

    /// Trapezoid-rule double integral of `f(x, y, u)` over the grid.
    pub fn integrate<F: Fn(f64, f64, f64) -> f64>(&self, f: F) -> f64 {
        let wx = uniform_trapezoid_weights(self.nx, self.dx);
        let wy = uniform_trapezoid_weights(self.ny, self.dy);
        let mut total = 0.0;
        for j in 0..self.nx {
            let x = self.x(j);
            let mut row = 0.0;
            for k in 0..self.ny {
                row += wy[k] * f(x, self.y(k), self.values[j * self.ny + k]);
            }
            total += wx[j] * row;
        }
        total
    }

    /// Trapezoid-rule mass; the loss is `1 - mass`.
    pub fn survival_mass(&self) -> SurvivalMass {
        let mass = self.integrate(|_, _, u| u);
        SurvivalMass { mass, loss: 1.0 - mass }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `a·self + b·other`, for grids of identical layout.
    pub fn combine(&self, a: f64, other: &DensityGrid, b: f64) -> Result<DensityGrid> {
        if !self.same_layout(other) {
            return Err(Error::Shape("grids differ in layout".into()));
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    /// Zeroes the four edges of the box.
    pub fn pin_boundary(&mut self) {
        let (nx, ny) = (self.nx, self.ny);
        for k in 0..ny {
            self.values[k] = 0.0;
            self.values[(nx - 1) * ny + k] = 0.0;
        }
        for j in 0..nx {
            self.values[j * ny] = 0.0;
            self.values[j * ny + ny - 1] = 0.0;
        }
    }
}

/// Survival mass of a grid; see [`DensityGrid::survival_mass`].
pub fn survival_mass(grid: &DensityGrid) -> SurvivalMass {
    grid.survival_mass()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grid_has_zero_mass() {
        let g = DensityGrid::zeros(0.1, 11, -1.0, 0.1, 21);
        assert_eq!(survival_mass(&g), SurvivalMass { mass: 0.0, loss: 1.0 });
    }

    #[test]
    fn trapezoid_mass_of_bilinear_function() {
        let mut g = DensityGrid::zeros(0.1, 11, -1.0, 0.1, 21);
        for j in 0..g.nx {
            for k in 0..g.ny {
                let v = g.x(j) * (g.y(k) + 1.0);
                g.set(j, k, v);
            }
        }
        // ∫₀¹ x dx · ∫₋₁¹ (y+1) dy = 0.5 · 2
        assert!((g.survival_mass().mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn combine_checks_layout() {
        let a = DensityGrid::zeros(0.1, 11, -1.0, 0.1, 21);
        let b = DensityGrid::zeros(0.1, 12, -1.0, 0.1, 21);
        assert!(a.combine(1.0, &b, 1.0).is_err());
    }
}
