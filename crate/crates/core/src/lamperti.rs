//! Lamperti transform of the volatility SDE and the closed-form Malliavin
//! derivatives built on it.
//!
//! With `Q(y) = ∫₀^y dz/q(z)`, the transformed volatility `v = Q(σ)` has unit
//! diffusion coefficient and drift
//!
//! ```text
//! V(x) = k(θ - z)/q(z) - ξ²/2 q'(z),   z = Q⁻¹(x)
//! ```
//!
//! Since `(Q⁻¹)' = q∘Q⁻¹`, `V'` and `V''` are explicit in `z` too, so every
//! routine that walks a volatility path evaluates them at `z = σ_s` directly
//! and never inverts `Q`.

use crate::error::{Error, Result};
use crate::model::{CoefficientVector, VolSpec};
use crate::quadrature::{adaptive_simpson, linspace};

/// `Q`, its inverse and the transformed drift for one coefficient vector.
#[derive(Debug, Clone)]
pub struct LampertiMap {
    spec: VolSpec,
    coeffs: CoefficientVector,
    tolerance: f64,
}

/// `(V, V', V'')` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftTriple {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
}

/// A scalar path sampled on the uniform grid `t0 + i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledPath {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        SampledPath { t0, dt, values }
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.dt * (self.values.len().saturating_sub(1)) as f64
    }

    fn covers(&self, a: f64, b: f64) -> bool {
        let slack = 1e-9 * self.dt;
        !self.values.is_empty() && a >= self.t0 - slack && b <= self.end() + slack
    }

    /// Fractional grid position of `t`, clamped to the path.
    fn position(&self, t: f64) -> (usize, f64) {
        let n = self.values.len();
        let s = ((t - self.t0) / self.dt).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n.saturating_sub(2));
        (i, s - i as f64)
    }

    fn interpolate(&self, nodes: &[f64], t: f64) -> f64 {
        if nodes.len() == 1 {
            return nodes[0];
        }
        let (i, f) = self.position(t);
        nodes[i] + f * (nodes[i + 1] - nodes[i])
    }

    /// Running trapezoid integral of node values from `t0`.
    fn cumulative(&self, nodes: &[f64]) -> Vec<f64> {
        let mut c = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        c.push(0.0);
        for w in nodes.windows(2) {
            acc += 0.5 * self.dt * (w[0] + w[1]);
            c.push(acc);
        }
        c
    }

    /// `∫_a^b` of the piecewise-linear interpolant of `nodes`, given its
    /// running integral `cum`.
    fn integral(&self, nodes: &[f64], cum: &[f64], a: f64, b: f64) -> f64 {
        self.antiderivative(nodes, cum, b) - self.antiderivative(nodes, cum, a)
    }

    fn antiderivative(&self, nodes: &[f64], cum: &[f64], t: f64) -> f64 {
        if nodes.len() == 1 {
            return 0.0;
        }
        let (i, f) = self.position(t);
        let g0 = nodes[i];
        let g1 = nodes[i + 1];
        cum[i] + self.dt * f * (g0 + 0.5 * f * (g1 - g0))
    }
}

/// Bounds on the Malliavin derivatives of `σ_t` over a horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeBounds {
    /// Lower bound `b''_T` of `D_{t'}σ_t`.
    pub b_lower: f64,
    /// Upper bound `b̃_T` of `D_{t'}σ_t`.
    pub b_upper: f64,
    /// Bound `b'_T` on `|D_{t',t''}σ_t|`.
    pub b_second: f64,
    pub horizon: f64,
    /// `M_{|V'|}` as used in the bounds.
    pub max_abs_dv: f64,
    /// `M_{|V''|}` as used in the bounds.
    pub max_abs_d2v: f64,
    /// `M_{|q'|}` as used in the bounds.
    pub max_abs_dq: f64,
}

/// Where `V'`, `V''` and `q'` are probed when they are not known exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    /// Half width `R` of `[Q(θ) - R, Q(θ) + R]`; `None` means `20ξ/√(2k)`.
    pub half_width: Option<f64>,
    pub points: usize,
    /// Multiplier applied to every probed maximum.
    pub safety: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { half_width: None, points: 4001, safety: 1.05 }
    }
}

impl LampertiMap {
    pub fn new(spec: VolSpec, coeffs: CoefficientVector) -> Self {
        LampertiMap { spec, coeffs, tolerance: 1e-13 }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn spec(&self) -> &VolSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &CoefficientVector {
        &self.coeffs
    }

    /// `Q(y) = ∫₀^y dz / q(z)` by adaptive Simpson.
    pub fn transform(&self, y: f64) -> f64 {
        let q = &self.spec.q;
        if let crate::model::VolOfVol::Constant(c) = q {
            return y / c;
        }
        adaptive_simpson(&|z| 1.0 / q.value(z), 0.0, y, self.tolerance)
    }

    /// `Q` at every node of an increasing grid, integrating node to node.
    pub fn transform_grid(&self, grid: &[f64]) -> Vec<f64> {
        let q = &self.spec.q;
        let mut out = Vec::with_capacity(grid.len());
        let Some(&first) = grid.first() else {
            return out;
        };
        let mut acc = self.transform(first);
        out.push(acc);
        for w in grid.windows(2) {
            acc += adaptive_simpson(&|z| 1.0 / q.value(z), w[0], w[1], self.tolerance);
            out.push(acc);
        }
        out
    }

    /// `Q⁻¹(v)`: expanding bracket search, then safeguarded Newton.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("cannot invert Q at {v}")));
        }
        if let crate::model::VolOfVol::Constant(c) = &self.spec.q {
            return Ok(v * c);
        }
        let (mq, big_mq) = self.spec.q_bounds;
        let guess = v * 0.5 * (mq + big_mq);
        let mut step = 1.0f64.max(guess.abs() * 0.1);
        let (mut lo, mut hi) = (guess, guess);
        let (mut flo, mut fhi) = (self.transform(lo) - v, self.transform(hi) - v);
        let mut expansions = 0;
        while flo > 0.0 {
            lo -= step;
            step *= 2.0;
            flo = self.transform(lo) - v;
            expansions += 1;
            if expansions > 64 || !flo.is_finite() {
                return Err(Error::Numeric(format!("no root bracket for Q(y) = {v}")));
            }
        }
        while fhi < 0.0 {
            hi += step;
            step *= 2.0;
            fhi = self.transform(hi) - v;
            expansions += 1;
            if expansions > 128 || !fhi.is_finite() {
                return Err(Error::Numeric(format!("no root bracket for Q(y) = {v}")));
            }
        }
        if flo == 0.0 {
            return Ok(lo);
        }
        if fhi == 0.0 {
            return Ok(hi);
        }
        let mut y = 0.5 * (lo + hi);
        for _ in 0..200 {
            let fy = self.transform(y) - v;
            if fy == 0.0 {
                return Ok(y);
            }
            if fy < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            // Q' = 1/q.
            let newton = y - fy * self.spec.q.value(y);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - y).abs() <= 1e-15 * (1.0 + y.abs()) || hi - lo <= 1e-15 * (1.0 + y.abs()) {
                return Ok(next);
            }
            y = next;
        }
        Ok(y)
    }

    /// `(V, V', V'')` at `x`.
    pub fn drift(&self, x: f64) -> Result<DriftTriple> {
        let z = self.inverse(x)?;
        Ok(self.drift_at_level(z))
    }

    /// `(V, V', V'')` at `x = Q(z)`, evaluated from `z` directly.
    pub fn drift_at_level(&self, z: f64) -> DriftTriple {
        let CoefficientVector { k, theta, xi, .. } = self.coeffs;
        let [q, q1, q2, q3] = self.spec.q.eval(z);
        let half_xi2 = 0.5 * xi * xi;
        let gap = theta - z;
        let inner = k * (-q - gap * q1) / (q * q) - half_xi2 * q2;
        DriftTriple {
            v: k * gap / q - half_xi2 * q1,
            dv: q * inner,
            d2v: q * q1 * inner + 2.0 * k * q1 - k * gap * (q2 - 2.0 * q1 * q1 / q)
                - half_xi2 * q3 * q * q,
        }
    }

    fn noise_scale(&self) -> f64 {
        let c = &self.coeffs;
        c.xi * (1.0 - c.rho2 * c.rho2).sqrt()
    }

    /// `D_{t'}σ_t = ξ√(1-ρ₂²) q(σ_t) exp(∫_{t'}^t V'(Q(σ_s)) ds)` for
    /// `t' <= t`, zero for `t < t'`. The time integral is the trapezoid rule
    /// on the path grid.
    pub fn malliavin_first(&self, path: &SampledPath, t_prime: f64, t: f64) -> Result<f64> {
        if t < t_prime {
            return Ok(0.0);
        }
        if !path.covers(t_prime, t) {
            return Err(Error::Domain(format!(
                "path on [{}, {}] does not cover [{t_prime}, {t}]",
                path.t0,
                path.end()
            )));
        }
        let dv: Vec<f64> = path.values.iter().map(|&s| self.drift_at_level(s).dv).collect();
        let cum = path.cumulative(&dv);
        let sigma_t = path.interpolate(&path.values, t);
        let a = path.integral(&dv, &cum, t_prime, t);
        Ok(self.noise_scale() * self.spec.q.value(sigma_t) * a.exp())
    }

    /// Second Malliavin derivative `D_{t',t''}σ_t`.
    ///
    /// ```text
    /// c² q'(σ_t) q(σ_t) e^{A(t',t)} e^{A(t'',t)}
    ///   + c² q(σ_t) e^{A(t',t)} ∫_{max(t',t'')}^t V''(Q(σ_s)) e^{A(t'',s)} ds
    /// ```
    /// with `c = ξ√(1-ρ₂²)` and `A(a,b) = ∫_a^b V'(Q(σ_s)) ds`. Zero when
    /// either derivative time exceeds `t`.
    pub fn malliavin_second(
        &self,
        path: &SampledPath,
        t_prime: f64,
        t_doubleprime: f64,
        t: f64,
    ) -> Result<f64> {
        if t < t_prime || t < t_doubleprime {
            return Ok(0.0);
        }
        let start = t_prime.min(t_doubleprime);
        if !path.covers(start, t) {
            return Err(Error::Domain(format!(
                "path on [{}, {}] does not cover [{start}, {t}]",
                path.t0,
                path.end()
            )));
        }
        let triples: Vec<DriftTriple> =
            path.values.iter().map(|&s| self.drift_at_level(s)).collect();
        let dv: Vec<f64> = triples.iter().map(|d| d.dv).collect();
        let cum = path.cumulative(&dv);
        let sigma_t = path.interpolate(&path.values, t);
        let [q, q1, _, _] = self.spec.q.eval(sigma_t);
        let c2 = self.noise_scale().powi(2);

        let a1 = path.integral(&dv, &cum, t_prime, t);
        let a2 = path.integral(&dv, &cum, t_doubleprime, t);
        let first = c2 * q1 * q * a1.exp() * a2.exp();

        let anchor = path.antiderivative(&dv, &cum, t_doubleprime);
        let weighted: Vec<f64> = triples
            .iter()
            .zip(&cum)
            .map(|(d, &ci)| d.d2v * (ci - anchor).exp())
            .collect();
        let wcum = path.cumulative(&weighted);
        let lower = t_prime.max(t_doubleprime);
        let inner = path.integral(&weighted, &wcum, lower, t);
        let second = c2 * q * a1.exp() * inner;
        Ok(first + second)
    }

    /// `b''_T`, `b̃_T` and `b'_T`.
    ///
    /// For constant `q`, `V' ≡ -k` and `V'' ≡ 0` exactly and no probing is
    /// done. Otherwise `|V'|`, `|V''|` and `|q'|` are maximised over the probe
    /// range and multiplied by the probe's safety factor.
    pub fn derivative_bounds(&self, horizon: f64, probe: &ProbeConfig) -> Result<DerivativeBounds> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        let c = &self.coeffs;
        if !(c.xi > 0.0) {
            return Err(Error::Domain("derivative bounds need xi > 0".into()));
        }
        let (max_dv, max_d2v, max_dq) = if self.spec.q.is_constant() {
            (c.k.abs(), 0.0, 0.0)
        } else {
            let half_width = match probe.half_width {
                Some(r) => r,
                None if c.k > 0.0 => 20.0 * c.xi / (2.0 * c.k).sqrt(),
                None => {
                    return Err(Error::Domain("default probe range needs k > 0".into()));
                }
            };
            let centre = self.transform(c.theta);
            let z_lo = self.inverse(centre - half_width)?;
            let z_hi = self.inverse(centre + half_width)?;
            let mut m = (0.0f64, 0.0f64, 0.0f64);
            for z in linspace(z_lo, z_hi, probe.points.max(2)) {
                let d = self.drift_at_level(z);
                let dq = self.spec.q.eval(z)[1];
                m.0 = m.0.max(d.dv.abs());
                m.1 = m.1.max(d.d2v.abs());
                m.2 = m.2.max(dq.abs());
            }
            (m.0 * probe.safety, m.1 * probe.safety, m.2 * probe.safety)
        };
        let scale = self.noise_scale();
        let (mq, big_mq) = self.spec.q_bounds;
        let grow = (horizon * max_dv).exp();
        Ok(DerivativeBounds {
            b_lower: scale * mq / grow,
            b_upper: scale * big_mq * grow,
            b_second: scale * scale * big_mq * grow * grow * (max_dq + horizon * max_d2v),
            horizon,
            max_abs_dv: max_dv,
            max_abs_d2v: max_d2v,
            max_abs_dq: max_dq,
        })
    }
}

/// Upper bound on the conditional volatility density at time `t`:
///
/// ```text
/// (C+2) √(t² b') / (t b'') + C √(t b̃) / (t b'')
/// ```
///
/// `constant` is the unspecified deterministic constant `C`; the result is a
/// shape diagnostic (`C' + C''/√t`), not a sharp bound.
pub fn density_sup_bound(bounds: &DerivativeBounds, t: f64, constant: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("density bound needs t > 0, got {t}")));
    }
    if t > bounds.horizon * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "t = {t} exceeds the horizon {} of the bounds",
            bounds.horizon
        )));
    }
    let denom = t * bounds.b_lower;
    Ok((constant + 2.0) * (t * t * bounds.b_second).sqrt() / denom
        + constant * (t * bounds.b_upper).sqrt() / denom)
}
