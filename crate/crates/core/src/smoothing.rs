//! Smoothing in the volatility variable with the transformed heat kernel
//!
//! ```text
//! φ_ε(z, y) = exp(-(Q(z) - y)² / (2ε)) / √(2πε)
//! ```
//!
//! and the energy-identity diagnostic for smoothed SPDE solutions.
//!
//! Kernel values are always computed from `v = Q(z)`, so a smoothing
//! quadrature is a Gaussian quadrature in `v`. Contributions with
//! `|Q(z) - y| > 8√ε` are dropped (relative size below `e^{-32}`).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lamperti::LampertiMap;
use crate::model::{CoefficientVector, VolSpec};
use crate::quadrature::{adaptive_simpson, interpolate, trapezoid_weights, uniform_trapezoid_weights};
use crate::spde::{DensityGrid, SolutionSeries};

/// Number of kernel standard deviations kept.
const REACH: f64 = 8.0;
/// Minimum quadrature nodes per kernel standard deviation.
const NODES_PER_SD: f64 = 8.0;

/// `φ_ε` bound to a Lamperti map.
#[derive(Debug, Clone)]
pub struct TransformedKernel {
    epsilon: f64,
    map: LampertiMap,
}

impl TransformedKernel {
    pub fn new(map: LampertiMap, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(TransformedKernel { epsilon, map })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn map(&self) -> &LampertiMap {
        &self.map
    }

    /// Kernel standard deviation `√ε`.
    pub fn width(&self) -> f64 {
        self.epsilon.sqrt()
    }

    /// `φ_ε` in transformed coordinates, `v = Q(z)`.
    pub fn phi_v(&self, v: f64, y: f64) -> f64 {
        let d = v - y;
        (-0.5 * d * d / self.epsilon).exp() / (2.0 * std::f64::consts::PI * self.epsilon).sqrt()
    }

    /// `∂φ_ε/∂y` in transformed coordinates.
    pub fn dphi_dy_v(&self, v: f64, y: f64) -> f64 {
        (v - y) / self.epsilon * self.phi_v(v, y)
    }

    pub fn phi(&self, z: f64, y: f64) -> f64 {
        self.phi_v(self.map.transform(z), y)
    }

    /// `∫ φ_ε(z, y) Q'(z) dz` over the kernel's reach, computed in `z`.
    /// Equals one up to quadrature and the `8√ε` truncation.
    pub fn kernel_mass(&self, y: f64) -> Result<f64> {
        let r = REACH * self.width();
        let lo = self.map.inverse(y - r)?;
        let hi = self.map.inverse(y + r)?;
        let q = &self.map.spec().q;
        Ok(adaptive_simpson(&|z| self.phi(z, y) / q.value(z), lo, hi, 1e-12))
    }
}

/// A function `u(λ, z)` sampled on an increasing `z` grid for `n_lambda`
/// values of the remaining variables: `values[l * nz + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub n_lambda: usize,
    pub z: Vec<f64>,
    pub values: Vec<f64>,
    /// `∂u/∂z` at the same nodes, when known.
    pub dvalues_dz: Option<Vec<f64>>,
    /// Quadrature weights over `λ` for L² norms (default all one).
    pub lambda_weights: Vec<f64>,
}

impl SampledField {
    pub fn new(n_lambda: usize, z: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if z.len() < 2 || z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("z grid must be strictly increasing with two nodes".into()));
        }
        if values.len() != n_lambda * z.len() {
            return Err(Error::Shape(format!(
                "{} values for {n_lambda} × {} nodes",
                values.len(),
                z.len()
            )));
        }
        Ok(SampledField { n_lambda, z, values, dvalues_dz: None, lambda_weights: vec![1.0; n_lambda] })
    }

    /// Samples `f(λ-index, z)` and optionally its `z` derivative.
    pub fn from_fn<F, D>(n_lambda: usize, z: Vec<f64>, f: F, df: Option<D>) -> Result<Self>
    where
        F: Fn(usize, f64) -> f64,
        D: Fn(usize, f64) -> f64,
    {
        let values = (0..n_lambda).flat_map(|l| z.iter().map(move |&zz| (l, zz))).map(|(l, zz)| f(l, zz)).collect();
        let mut s = Self::new(n_lambda, z, values)?;
        if let Some(df) = df {
            s.dvalues_dz = Some(
                (0..n_lambda)
                    .flat_map(|l| s.z.iter().map(move |&zz| (l, zz)))
                    .map(|(l, zz)| df(l, zz))
                    .collect(),
            );
        }
        Ok(s)
    }

    pub fn with_lambda_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.n_lambda {
            return Err(Error::Shape("one weight per λ required".into()));
        }
        self.lambda_weights = w;
        Ok(self)
    }

    fn nz(&self) -> usize {
        self.z.len()
    }

    fn row(&self, l: usize) -> &[f64] {
        &self.values[l * self.nz()..(l + 1) * self.nz()]
    }
}

/// A smoothed (or limit) field on a `y` grid: `values[l * ny + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedField {
    pub label: String,
    /// `None` for the ε → 0 limit.
    pub epsilon: Option<f64>,
    pub n_lambda: usize,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
    pub dvalues_dy: Option<Vec<f64>>,
}

/// Precomputed kernel weights from a `z` grid to a `y` grid.
struct KernelMatrix {
    ny: usize,
    /// Index range of contributing `z` nodes for each `y`.
    ranges: Vec<(usize, usize)>,
    /// Quadrature weight × kernel, packed per `y` over its range.
    phi: Vec<Vec<f64>>,
    dphi: Vec<Vec<f64>>,
}

impl KernelMatrix {
    fn new(kernel: &TransformedKernel, qz: &[f64], wz: &[f64], y: &[f64]) -> Result<Self> {
        let sd = kernel.width();
        let max_gap = qz.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        if max_gap > sd / NODES_PER_SD {
            return Err(Error::Resolution(format!(
                "z grid spacing reaches {max_gap:.3e} in Q units, above √ε/8 = {:.3e}",
                sd / NODES_PER_SD
            )));
        }
        let reach = REACH * sd;
        let mut ranges = Vec::with_capacity(y.len());
        let mut phi = Vec::with_capacity(y.len());
        let mut dphi = Vec::with_capacity(y.len());
        for &ym in y {
            let a = qz.partition_point(|&v| v < ym - reach);
            let b = qz.partition_point(|&v| v <= ym + reach);
            ranges.push((a, b));
            phi.push((a..b).map(|i| wz[i] * kernel.phi_v(qz[i], ym)).collect());
            dphi.push((a..b).map(|i| wz[i] * kernel.dphi_dy_v(qz[i], ym)).collect());
        }
        Ok(KernelMatrix { ny: y.len(), ranges, phi, dphi })
    }

    /// `out[m] = Σ_i K[m, i] a[i]` (and the `y` derivative when asked).
    fn apply(&self, a: &[f64], out: &mut [f64], derivative: bool) {
        let table = if derivative { &self.dphi } else { &self.phi };
        for m in 0..self.ny {
            let (lo, hi) = self.ranges[m];
            out[m] = table[m].iter().zip(&a[lo..hi]).map(|(k, v)| k * v).sum();
        }
    }
}

/// `I_{ε,g}(λ, y) = ∫ g(z) u(λ, z) φ_ε(z, y) dz` by the trapezoid rule on
/// the field's `z` grid, with `∂/∂y` from the differentiated kernel.
/// `u` is taken as zero outside its grid.
pub fn smooth(
    u: &SampledField,
    g: &dyn Fn(f64) -> f64,
    label: &str,
    kernel: &TransformedKernel,
    y_grid: &[f64],
) -> Result<SmoothedField> {
    let qz = kernel.map().transform_grid(&u.z);
    let wz = trapezoid_weights(&u.z);
    let km = KernelMatrix::new(kernel, &qz, &wz, y_grid)?;
    let gz: Vec<f64> = u.z.iter().map(|&z| g(z)).collect();
    let ny = y_grid.len();
    let mut values = vec![0.0; u.n_lambda * ny];
    let mut dvalues = vec![0.0; u.n_lambda * ny];
    let mut a = vec![0.0; u.nz()];
    for l in 0..u.n_lambda {
        for (ai, (gi, ui)) in a.iter_mut().zip(gz.iter().zip(u.row(l))) {
            *ai = gi * ui;
        }
        km.apply(&a, &mut values[l * ny..(l + 1) * ny], false);
        km.apply(&a, &mut dvalues[l * ny..(l + 1) * ny], true);
    }
    Ok(SmoothedField {
        label: label.to_string(),
        epsilon: Some(kernel.epsilon()),
        n_lambda: u.n_lambda,
        y: y_grid.to_vec(),
        values,
        dvalues_dy: Some(dvalues),
    })
}

/// The ε → 0 limit `J_u(λ, y) = q(Q⁻¹(y)) u(λ, Q⁻¹(y))` on `Q` of the
/// field's `z` range and zero elsewhere, with `u` linearly interpolated.
///
/// When `∂u/∂z` is available the `y` derivative
/// `q'q u + q² ∂u/∂z` at `Q⁻¹(y)` is filled in too.
pub fn limit_j(u: &SampledField, map: &LampertiMap, y_grid: &[f64]) -> Result<SmoothedField> {
    let ny = y_grid.len();
    let mut values = vec![0.0; u.n_lambda * ny];
    let mut dvalues = u.dvalues_dz.as_ref().map(|_| vec![0.0; u.n_lambda * ny]);
    let nz = u.nz();
    for (m, &y) in y_grid.iter().enumerate() {
        let z = map.inverse(y)?;
        if z < u.z[0] || z > u.z[nz - 1] {
            continue;
        }
        let [q, q1, _, _] = map.spec().q.eval(z);
        for l in 0..u.n_lambda {
            let uz = interpolate(&u.z, u.row(l), z).unwrap_or(0.0);
            values[l * ny + m] = q * uz;
            if let (Some(dv), Some(du)) = (dvalues.as_mut(), u.dvalues_dz.as_ref()) {
                let duz = interpolate(&u.z, &du[l * nz..(l + 1) * nz], z).unwrap_or(0.0);
                dv[l * ny + m] = q1 * q * uz + q * q * duz;
            }
        }
    }
    Ok(SmoothedField {
        label: "J".into(),
        epsilon: None,
        n_lambda: u.n_lambda,
        y: y_grid.to_vec(),
        values,
        dvalues_dy: dvalues,
    })
}

/// Discrete L² distance over `(λ, y)`: trapezoid weights in `y`, the given
/// weights in `λ`.
pub fn l2_distance(a: &[f64], b: &[f64], y: &[f64], lambda_weights: &[f64]) -> Result<f64> {
    let ny = y.len();
    if a.len() != b.len() || a.len() != ny * lambda_weights.len() {
        return Err(Error::Shape("fields differ in shape".into()));
    }
    let wy = trapezoid_weights(y);
    let mut total = 0.0;
    for (l, wl) in lambda_weights.iter().enumerate() {
        for m in 0..ny {
            let d = a[l * ny + m] - b[l * ny + m];
            total += wl * wy[m] * d * d;
        }
    }
    Ok(total.sqrt())
}

/// One row of a [`convergence_study`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub distance: f64,
    /// Distance of the `y` derivatives, when `∂u/∂z` is known.
    pub derivative_distance: Option<f64>,
}

/// `‖J_{u,ε} - J_u‖` (and of the `y` derivatives) along decreasing `ε`.
pub fn convergence_study(
    u: &SampledField,
    map: &LampertiMap,
    epsilons: &[f64],
    y_grid: &[f64],
) -> Result<Vec<ConvergenceRow>> {
    if epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(
            "epsilons must be positive and strictly decreasing".into(),
        ));
    }
    let limit = limit_j(u, map, y_grid)?;
    epsilons
        .iter()
        .map(|&eps| {
            let kernel = TransformedKernel::new(map.clone(), eps)?;
            let s = smooth(u, &|_| 1.0, "J_eps", &kernel, y_grid)?;
            let distance = l2_distance(&s.values, &limit.values, y_grid, &u.lambda_weights)?;
            let derivative_distance = match (&s.dvalues_dy, &limit.dvalues_dy) {
                (Some(a), Some(b)) => Some(l2_distance(a, b, y_grid, &u.lambda_weights)?),
                _ => None,
            };
            Ok(ConvergenceRow { epsilon: eps, distance, derivative_distance })
        })
        .collect()
}

/// The weight `w` of the `x` direction in energy norms, with `(w²)'`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Weight {
    /// `w(x) = min(x, 1)`.
    #[default]
    MinOne,
    /// `w ≡ 1`.
    One,
}

impl Weight {
    pub fn w2(&self, x: f64) -> f64 {
        match self {
            Weight::MinOne => x.min(1.0).powi(2),
            Weight::One => 1.0,
        }
    }

    /// `(w²)'`, taking the left derivative at kinks.
    pub fn dw2(&self, x: f64) -> f64 {
        match self {
            Weight::MinOne if x <= 1.0 => 2.0 * x,
            _ => 0.0,
        }
    }
}

/// Every term of the energy identity for one solution path. Integrals over
/// time use the trapezoid rule on the snapshot times, stochastic integrals
/// left-point sums of the stored increments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyTerms {
    /// `‖I(t)‖²_w`.
    pub norm_final: f64,
    /// `‖I(0)‖²_w`.
    pub norm_initial: f64,
    /// `r ∫∫∫ (w²)' I²`.
    pub drift_strip: f64,
    /// `∫ ⟨∂x I_{h²}, I⟩_w`.
    pub h2_transport: f64,
    /// `2kθ ∫ ⟨I_{Q'}, ∂y I⟩_w`.
    pub q_prime_inverse: f64,
    /// `-ξ² ∫ ⟨I_{q'}, ∂y I⟩_w`.
    pub q_prime: f64,
    /// `-2k ∫ ⟨I_{zQ'}, ∂y I⟩_w`.
    pub z_q_prime: f64,
    /// `-∫ ⟨∂x I_{h²}, ∂x I⟩_w`.
    pub x_dissipation: f64,
    /// `-∫∫∫ (w²)' ∂x I_{h²} I`.
    pub weight_derivative: f64,
    /// `ρ₁² ∫ ‖∂x I_h‖²_w`.
    pub rho1_quadratic: f64,
    /// `-ξ²(1-ρ₂²) ∫ ‖∂y I‖²_w`.
    pub y_dissipation: f64,
    /// `-2(ρ - ξρ₃ρ₁ρ₂) ∫ ⟨∂x I_h, ∂y I⟩_w`.
    pub cross: f64,
    /// `-2ρ₁ ∫ ⟨∂x I_h, I⟩_w dW0`.
    pub martingale_w0: f64,
    /// `-2ξρ₂ ∫ ⟨∂y I, I⟩_w dB0`.
    pub martingale_b0: f64,
}

impl EnergyTerms {
    /// Right side without the stochastic integrals (the identity in mean).
    pub fn rhs_mean(&self) -> f64 {
        self.norm_initial
            + self.drift_strip
            + self.h2_transport
            + self.q_prime_inverse
            + self.q_prime
            + self.z_q_prime
            + self.x_dissipation
            + self.weight_derivative
            + self.rho1_quadratic
            + self.y_dissipation
            + self.cross
    }

    /// Right side of the pathwise identity.
    pub fn rhs_pathwise(&self) -> f64 {
        self.rhs_mean() + self.martingale_w0 + self.martingale_b0
    }

    pub fn as_array(&self) -> [f64; 14] {
        [
            self.norm_final,
            self.norm_initial,
            self.drift_strip,
            self.h2_transport,
            self.q_prime_inverse,
            self.q_prime,
            self.z_q_prime,
            self.x_dissipation,
            self.weight_derivative,
            self.rho1_quadratic,
            self.y_dissipation,
            self.cross,
            self.martingale_w0,
            self.martingale_b0,
        ]
    }

    fn from_array(a: [f64; 14]) -> Self {
        EnergyTerms {
            norm_final: a[0],
            norm_initial: a[1],
            drift_strip: a[2],
            h2_transport: a[3],
            q_prime_inverse: a[4],
            q_prime: a[5],
            z_q_prime: a[6],
            x_dissipation: a[7],
            weight_derivative: a[8],
            rho1_quadratic: a[9],
            y_dissipation: a[10],
            cross: a[11],
            martingale_w0: a[12],
            martingale_b0: a[13],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// `|lhs - rhs| / max(|lhs|, |rhs|, 1e-30)`.
pub fn relative_residual(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-30)
}

/// Instantaneous integrands at one snapshot.
#[derive(Default, Clone, Copy)]
struct Integrands {
    norm: f64,
    strip: f64,
    h2_transport: f64,
    q_inv: f64,
    q_prime: f64,
    z_q: f64,
    x_diss: f64,
    w_deriv: f64,
    rho1: f64,
    y_diss: f64,
    cross: f64,
    mart_w: f64,
    mart_b: f64,
}

/// Output `y` grid for the energy diagnostic: `Q` of the solver's `y` box,
/// widened by the kernel reach, spacing at most `√ε/4`.
pub fn energy_y_grid(kernel: &TransformedKernel, grid: &DensityGrid) -> Vec<f64> {
    let q = kernel.map();
    let lo = q.transform(grid.y_min) - REACH * kernel.width();
    let hi = q.transform(grid.y(grid.ny - 1)) + REACH * kernel.width();
    let n = ((hi - lo) / (0.25 * kernel.width())).ceil() as usize + 1;
    crate::quadrature::linspace(lo, hi, n)
}

/// Computes all terms of the energy identity along one solution path.
pub fn energy_terms(
    solution: &SolutionSeries,
    c: &CoefficientVector,
    spec: &VolSpec,
    kernel: &TransformedKernel,
    weight: Weight,
    execution: Execution,
) -> Result<EnergyTerms> {
    let increments = solution
        .increments
        .as_ref()
        .ok_or_else(|| Error::Input("solution carries no common-noise increments".into()))?;
    let snaps = &solution.snapshots;
    if snaps.len() < 2 || increments.len() + 1 != snaps.len() {
        return Err(Error::Input("need at least two snapshots with increments between them".into()));
    }
    let first = &snaps[0];
    if snaps.iter().any(|s| !s.same_layout(first)) {
        return Err(Error::Shape("snapshots differ in layout".into()));
    }
    let z = first.y_nodes();
    let qz = kernel.map().transform_grid(&z);
    let wz = uniform_trapezoid_weights(first.ny, first.dy);
    let y = energy_y_grid(kernel, first);
    let km = KernelMatrix::new(kernel, &qz, &wz, &y)?;

    let integrands: Vec<Integrands> = execution.map_range(snaps.len(), |s| {
        snapshot_integrands(&snaps[s], c, spec, &km, &y, weight)
    });

    let mut t = EnergyTerms {
        norm_final: integrands[snaps.len() - 1].norm,
        norm_initial: integrands[0].norm,
        ..Default::default()
    };
    for s in 0..snaps.len() - 1 {
        let dt = snaps[s + 1].t - snaps[s].t;
        let (a, b) = (&integrands[s], &integrands[s + 1]);
        let trap = |f: fn(&Integrands) -> f64| 0.5 * dt * (f(a) + f(b));
        t.drift_strip += trap(|i| i.strip);
        t.h2_transport += trap(|i| i.h2_transport);
        t.q_prime_inverse += trap(|i| i.q_inv);
        t.q_prime += trap(|i| i.q_prime);
        t.z_q_prime += trap(|i| i.z_q);
        t.x_dissipation += trap(|i| i.x_diss);
        t.weight_derivative += trap(|i| i.w_deriv);
        t.rho1_quadratic += trap(|i| i.rho1);
        t.y_dissipation += trap(|i| i.y_diss);
        t.cross += trap(|i| i.cross);
        let (dw, db) = increments[s];
        t.martingale_w0 += a.mart_w * dw;
        t.martingale_b0 += a.mart_b * db;
    }
    Ok(t)
}

fn snapshot_integrands(
    g: &DensityGrid,
    c: &CoefficientVector,
    spec: &VolSpec,
    km: &KernelMatrix,
    y: &[f64],
    weight: Weight,
) -> Integrands {
    let (nx, nz, ny) = (g.nx, g.ny, y.len());
    let z = g.y_nodes();
    let mult = |f: &dyn Fn(f64) -> f64| z.iter().map(|&zz| f(zz)).collect::<Vec<f64>>();
    let g_h2 = mult(&|s| spec.h.value(s).powi(2));
    let g_h = mult(&|s| spec.h.value(s));
    let g_qinv = mult(&|s| 1.0 / spec.q.value(s));
    let g_qp = mult(&|s| spec.q.eval(s)[1]);
    let g_zq = mult(&|s| s / spec.q.value(s));

    // Smoothed fields on (x_j, y_m).
    let mut i1 = vec![0.0; nx * ny];
    let mut di1 = vec![0.0; nx * ny];
    let mut ih2 = vec![0.0; nx * ny];
    let mut ih = vec![0.0; nx * ny];
    let mut iqinv = vec![0.0; nx * ny];
    let mut iqp = vec![0.0; nx * ny];
    let mut izq = vec![0.0; nx * ny];
    let mut a = vec![0.0; nz];
    for j in 0..nx {
        let u = &g.values[j * nz..(j + 1) * nz];
        let out = j * ny..(j + 1) * ny;
        km.apply(u, &mut i1[out.clone()], false);
        km.apply(u, &mut di1[out.clone()], true);
        for (target, mul) in [
            (&mut ih2, &g_h2),
            (&mut ih, &g_h),
            (&mut iqinv, &g_qinv),
            (&mut iqp, &g_qp),
            (&mut izq, &g_zq),
        ] {
            for k in 0..nz {
                a[k] = mul[k] * u[k];
            }
            km.apply(&a, &mut target[out.clone()], false);
        }
    }
    let dx = g.dx;
    let ddx = |f: &[f64], j: usize, m: usize| -> f64 {
        if j == 0 {
            (f[ny + m] - f[m]) / dx
        } else if j == nx - 1 {
            (f[j * ny + m] - f[(j - 1) * ny + m]) / dx
        } else {
            (f[(j + 1) * ny + m] - f[(j - 1) * ny + m]) / (2.0 * dx)
        }
    };
    let wx = uniform_trapezoid_weights(nx, dx);
    let wy = trapezoid_weights(y);
    let cross_coeff = -2.0 * (c.rho - c.xi * c.rho3 * c.rho1 * c.rho2);
    let mut s = Integrands::default();
    for j in 0..nx {
        let x = g.x(j);
        let w2 = weight.w2(x);
        let dw2 = weight.dw2(x);
        for m in 0..ny {
            let wq = wx[j] * wy[m];
            let idx = j * ny + m;
            let (i, dyi) = (i1[idx], di1[idx]);
            let dxi = ddx(&i1, j, m);
            let dxih2 = ddx(&ih2, j, m);
            let dxih = ddx(&ih, j, m);
            s.norm += wq * w2 * i * i;
            s.strip += wq * c.r * dw2 * i * i;
            s.h2_transport += wq * w2 * dxih2 * i;
            s.q_inv += wq * 2.0 * c.k * c.theta * w2 * iqinv[idx] * dyi;
            s.q_prime += -wq * c.xi * c.xi * w2 * iqp[idx] * dyi;
            s.z_q += -wq * 2.0 * c.k * w2 * izq[idx] * dyi;
            s.x_diss += -wq * w2 * dxih2 * dxi;
            s.w_deriv += -wq * dw2 * dxih2 * i;
            s.rho1 += wq * c.rho1 * c.rho1 * w2 * dxih * dxih;
            s.y_diss += -wq * c.xi * c.xi * (1.0 - c.rho2 * c.rho2) * w2 * dyi * dyi;
            s.cross += wq * cross_coeff * w2 * dxih * dyi;
            s.mart_w += -wq * 2.0 * c.rho1 * w2 * dxih * i;
            s.mart_b += -wq * 2.0 * c.xi * c.rho2 * w2 * dyi * i;
        }
    }
    s
}

/// Result of [`energy_identity_residual`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// Term-wise averages over the supplied paths.
    pub mean_terms: EnergyTerms,
    pub per_path: Vec<EnergyTerms>,
    /// Residual of the identity in mean (stochastic integrals dropped).
    pub residual: f64,
    /// Mean over paths of the pathwise residual.
    pub pathwise_residual: f64,
}

/// Residual of the energy identity averaged over solution paths driven by
/// independent common-noise paths (one path for deterministic scenarios).
pub fn energy_identity_residual(
    solutions: &[SolutionSeries],
    c: &CoefficientVector,
    spec: &VolSpec,
    kernel: &TransformedKernel,
    weight: Weight,
    execution: Execution,
) -> Result<EnergyReport> {
    if solutions.is_empty() {
        return Err(Error::Input("no solutions supplied".into()));
    }
    let per_path = solutions
        .iter()
        .map(|s| energy_terms(s, c, spec, kernel, weight, execution))
        .collect::<Result<Vec<_>>>()?;
    let n = per_path.len() as f64;
    let mut mean = [0.0; 14];
    for t in &per_path {
        for (m, v) in mean.iter_mut().zip(t.as_array()) {
            *m += v / n;
        }
    }
    let mean_terms = EnergyTerms::from_array(mean);
    let pathwise_residual = per_path
        .iter()
        .map(|t| relative_residual(t.norm_final, t.rhs_pathwise()))
        .sum::<f64>()
        / n;
    Ok(EnergyReport {
        residual: relative_residual(mean_terms.norm_final, mean_terms.rhs_mean()),
        mean_terms,
        per_path,
        pathwise_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VolMap;
    use crate::quadrature::linspace;
    use approx::assert_relative_eq;

    fn map_const(q0: f64) -> LampertiMap {
        let spec = VolSpec::ornstein_uhlenbeck(q0, 0.3).unwrap();
        LampertiMap::new(spec, CoefficientVector::standard(1.0, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0))
    }

    fn map_rational() -> LampertiMap {
        let spec = VolSpec::rational(VolMap::Constant(0.3)).unwrap();
        LampertiMap::new(spec, CoefficientVector::standard(1.0, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0))
    }

    fn gaussian(s2: f64) -> impl Fn(f64) -> f64 {
        move |z: f64| (-0.5 * z * z / s2).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
    }

    #[test]
    fn kernel_mass_is_one() {
        for map in [map_const(1.0), map_const(2.0), map_rational()] {
            let k = TransformedKernel::new(map, 0.05).unwrap();
            for &y in &[-2.0, 0.0, 0.3, 1.7] {
                assert_relative_eq!(k.kernel_mass(y).unwrap(), 1.0, epsilon = 1e-8);
            }
        }
        assert!(TransformedKernel::new(map_const(1.0), 0.0).is_err());
    }

    #[test]
    fn gaussian_convolution_identity() {
        let (s2, eps) = (0.3, 0.05);
        let z = linspace(-8.0, 8.0, 4001);
        let f = gaussian(s2);
        let u = SampledField::from_fn(1, z, |_, z| f(z), None::<fn(usize, f64) -> f64>).unwrap();
        let k = TransformedKernel::new(map_const(1.0), eps).unwrap();
        let y = linspace(-2.0, 2.0, 81);
        let out = smooth(&u, &|_| 1.0, "J", &k, &y).unwrap();
        let expect = gaussian(s2 + eps);
        for (m, &yy) in y.iter().enumerate() {
            assert!((out.values[m] - expect(yy)).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_is_linear_and_kills_zero() {
        let z = linspace(-3.0, 3.0, 601);
        let k = TransformedKernel::new(map_rational(), 0.1).unwrap();
        let y = linspace(-1.0, 1.0, 21);
        let f1 = SampledField::from_fn(2, z.clone(), |l, z| (z + l as f64).sin(), None::<fn(usize, f64) -> f64>).unwrap();
        let f2 = SampledField::from_fn(2, z.clone(), |_, z| z * z, None::<fn(usize, f64) -> f64>).unwrap();
        let mut mix = f1.clone();
        for (m, v) in mix.values.iter_mut().zip(&f2.values) {
            *m = 2.0 * *m - 3.0 * v;
        }
        let g = |z: f64| 1.0 + z * z;
        let a = smooth(&f1, &g, "a", &k, &y).unwrap();
        let b = smooth(&f2, &g, "b", &k, &y).unwrap();
        let c = smooth(&mix, &g, "c", &k, &y).unwrap();
        for i in 0..c.values.len() {
            assert!((c.values[i] - (2.0 * a.values[i] - 3.0 * b.values[i])).abs() < 1e-12);
        }
        let zero = SampledField::new(1, z, vec![0.0; 601]).unwrap();
        assert!(smooth(&zero, &g, "0", &k, &y).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let z = linspace(-3.0, 3.0, 61);
        let u = SampledField::new(1, z, vec![1.0; 61]).unwrap();
        let k = TransformedKernel::new(map_const(1.0), 0.01).unwrap();
        assert!(matches!(smooth(&u, &|_| 1.0, "J", &k, &[0.0]), Err(Error::Resolution(_))));
    }

    #[test]
    fn limit_examples() {
        let z = linspace(-4.0, 4.0, 801);
        let u = SampledField::from_fn(1, z, |_, z| (-z * z).exp(), None::<fn(usize, f64) -> f64>).unwrap();
        let y = linspace(-1.5, 1.5, 31);
        let j1 = limit_j(&u, &map_const(1.0), &y).unwrap();
        for (m, &yy) in y.iter().enumerate() {
            assert!((j1.values[m] - (-yy * yy).exp()).abs() < 1e-4);
        }
        let j2 = limit_j(&u, &map_const(2.0), &y).unwrap();
        for (m, &yy) in y.iter().enumerate() {
            assert!((j2.values[m] - 2.0 * (-4.0 * yy * yy).exp()).abs() < 1e-3);
        }
        // Outside Q of the z range the limit vanishes.
        let far = limit_j(&u, &map_const(2.0), &[3.0]).unwrap();
        assert_eq!(far.values[0], 0.0);
    }

    #[test]
    fn convergence_is_monotone_and_first_order_for_smooth_u() {
        let z = linspace(-6.0, 6.0, 2401);
        let u = SampledField::from_fn(
            1,
            z,
            |_, z| (-z * z).exp(),
            Some(|_: usize, z: f64| -2.0 * z * (-z * z).exp()),
        )
        .unwrap();
        let y = linspace(-3.0, 3.0, 241);
        let rows = convergence_study(&u, &map_const(1.0), &[0.2, 0.1, 0.05, 0.025], &y).unwrap();
        assert!(rows.windows(2).all(|w| w[1].distance < w[0].distance));
        let ratio = rows[2].distance / rows[3].distance;
        assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
        assert!(rows.iter().all(|r| r.derivative_distance.is_some()));
        assert!(convergence_study(&u, &map_const(1.0), &[0.1, 0.2], &y).is_err());
    }

    #[test]
    fn weight_derivative() {
        let w = Weight::MinOne;
        assert_eq!(w.w2(0.5), 0.25);
        assert_eq!(w.w2(3.0), 1.0);
        assert_eq!(w.dw2(0.5), 1.0);
        assert_eq!(w.dw2(2.0), 0.0);
    }
}
