//! Model parameters, volatility functions and their checks.
//!
//! Each asset carries a [`CoefficientVector`]. The volatility process is
//! `dσ = k(θ - σ)dt + ξ q(σ) dB`, and the asset's log distance to default
//! diffuses with volatility `h(σ)`. [`VolSpec`] bundles `q`, `h` and the
//! bounds the rest of the toolkit relies on.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-asset parameters plus the systemic correlation and the SPDE
/// cross-derivative coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientVector {
    /// Mean-reversion speed of the volatility.
    pub k: f64,
    /// Mean level of the volatility.
    pub theta: f64,
    /// Vol-of-vol scale.
    pub xi: f64,
    /// Drift rate of the asset value.
    pub r: f64,
    /// Correlation of the asset with the systemic factor `W0`.
    pub rho1: f64,
    /// Correlation of the volatility with the systemic factor `B0`.
    pub rho2: f64,
    /// Correlation between `W0` and `B0`.
    pub rho3: f64,
    /// Coefficient of the mixed `(h q u)_xy` term in the density SPDE.
    pub rho: f64,
}

impl CoefficientVector {
    /// Coefficients of a portfolio with independent idiosyncratic noises,
    /// for which `rho = xi * rho3 * rho1 * rho2`.
    pub fn standard(k: f64, theta: f64, xi: f64, r: f64, rho1: f64, rho2: f64, rho3: f64) -> Self {
        CoefficientVector {
            k,
            theta,
            xi,
            r,
            rho1,
            rho2,
            rho3,
            rho: standard_rho(xi, rho1, rho2, rho3),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// Checks the parameter invariants. The error message names the violated one.
    ///
    /// `k` and `xi` may be zero: the degenerate constant-volatility reductions
    /// are legitimate scenarios. Operations that need them strictly positive
    /// check that themselves.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k", self.k),
            ("theta", self.theta),
            ("xi", self.xi),
            ("r", self.r),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
            ("rho", self.rho),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.rho1 > -1.0 && self.rho1 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho1 ∈ (-1,1) violated: rho1 = {}",
                self.rho1
            )));
        }
        if !(self.rho2 > -1.0 && self.rho2 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho2 ∈ (-1,1) violated: rho2 = {}",
                self.rho2
            )));
        }
        if !(-1.0..=1.0).contains(&self.rho3) {
            return Err(Error::InvalidParameter(format!(
                "rho3 ∈ [-1,1] violated: rho3 = {}",
                self.rho3
            )));
        }
        if self.k < 0.0 {
            return Err(Error::InvalidParameter(format!("k >= 0 violated: k = {}", self.k)));
        }
        if self.xi < 0.0 {
            return Err(Error::InvalidParameter(format!("xi >= 0 violated: xi = {}", self.xi)));
        }
        Ok(())
    }
}

fn standard_rho(xi: f64, rho1: f64, rho2: f64, rho3: f64) -> f64 {
    xi * rho3 * rho1 * rho2
}

type SmoothFn = dyn Fn(f64) -> [f64; 4] + Send + Sync;
type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// The vol-of-vol function `q` with derivative evaluators up to third order.
#[derive(Clone)]
pub enum VolOfVol {
    /// `q ≡ c`: Ornstein-Uhlenbeck volatility.
    Constant(f64),
    /// `q(z) = base + amplitude / (1 + z²)`.
    Rational { base: f64, amplitude: f64 },
    /// User supplied; returns `[q, q', q'', q''']`.
    Custom(Arc<SmoothFn>),
}

impl fmt::Debug for VolOfVol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolOfVol::Constant(c) => write!(f, "Constant({c})"),
            VolOfVol::Rational { base, amplitude } => {
                write!(f, "Rational {{ base: {base}, amplitude: {amplitude} }}")
            }
            VolOfVol::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl VolOfVol {
    pub fn custom(f: impl Fn(f64) -> [f64; 4] + Send + Sync + 'static) -> Self {
        VolOfVol::Custom(Arc::new(f))
    }

    /// `[q, q', q'', q''']` at `z`.
    pub fn eval(&self, z: f64) -> [f64; 4] {
        match self {
            VolOfVol::Constant(c) => [*c, 0.0, 0.0, 0.0],
            VolOfVol::Rational { base, amplitude } => {
                let s = 1.0 + z * z;
                let s2 = s * s;
                let s3 = s2 * s;
                [
                    base + amplitude / s,
                    -2.0 * amplitude * z / s2,
                    2.0 * amplitude * (3.0 * z * z - 1.0) / s3,
                    24.0 * amplitude * z * (1.0 - z * z) / (s3 * s),
                ]
            }
            VolOfVol::Custom(f) => f(z),
        }
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            VolOfVol::Constant(c) => *c,
            VolOfVol::Rational { base, amplitude } => base + amplitude / (1.0 + z * z),
            VolOfVol::Custom(f) => f(z)[0],
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VolOfVol::Constant(_))
    }
}

/// The volatility mapping `h`, valued in a compact subset of `(0, ∞)`.
#[derive(Clone)]
pub enum VolMap {
    Constant(f64),
    /// `h(y) = clamp(|y|, min, max)`.
    ClampAbs { min: f64, max: f64 },
    Custom(Arc<ScalarFn>),
}

impl fmt::Debug for VolMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolMap::Constant(c) => write!(f, "Constant({c})"),
            VolMap::ClampAbs { min, max } => write!(f, "ClampAbs {{ min: {min}, max: {max} }}"),
            VolMap::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl VolMap {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        VolMap::Custom(Arc::new(f))
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            VolMap::Constant(c) => *c,
            VolMap::ClampAbs { min, max } => y.abs().clamp(*min, *max),
            VolMap::Custom(f) => f(y),
        }
    }
}

/// `q`, `h` and their declared bounds.
#[derive(Debug, Clone)]
pub struct VolSpec {
    pub q: VolOfVol,
    pub h: VolMap,
    /// Declared `[m_q, M_q]`.
    pub q_bounds: (f64, f64),
    /// Declared `[h_min, h_max]`.
    pub h_bounds: (f64, f64),
    /// `c_d` with `|q⁽ⁿ⁾(x)| (1 + |x|) <= c_d` for `n = 1, 2, 3`.
    pub derivative_decay: f64,
}

/// Decay constant of `1/(1+z²)`'s first three derivatives: the largest of
/// `sup |dⁿ/dzⁿ (1+z²)⁻¹| (1+|z|)` over `n = 1, 2, 3` is about 6.285, at `n = 3`.
const RATIONAL_DECAY: f64 = 6.5;

impl VolSpec {
    /// Builds a spec and checks the declared bounds are well formed.
    pub fn new(
        q: VolOfVol,
        h: VolMap,
        q_bounds: (f64, f64),
        h_bounds: (f64, f64),
        derivative_decay: f64,
    ) -> Result<Self> {
        let (mq, big_mq) = q_bounds;
        if !(mq > 0.0 && mq <= big_mq && big_mq.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "q bounds must satisfy 0 < m_q <= M_q < inf, got [{mq}, {big_mq}]"
            )));
        }
        let (hmin, hmax) = h_bounds;
        if !(hmin > 0.0 && hmin <= hmax && hmax.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "h bounds must satisfy 0 < h_min <= h_max < inf, got [{hmin}, {hmax}]"
            )));
        }
        if !(derivative_decay >= 0.0 && derivative_decay.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "derivative decay constant must be finite and >= 0, got {derivative_decay}"
            )));
        }
        Ok(VolSpec { q, h, q_bounds, h_bounds, derivative_decay })
    }

    /// `q ≡ q0` with `h ≡ h0`.
    pub fn ornstein_uhlenbeck(q0: f64, h0: f64) -> Result<Self> {
        Self::new(VolOfVol::Constant(q0), VolMap::Constant(h0), (q0, q0), (h0, h0), 0.0)
    }

    /// `q(z) = 2 + 1/(1+z²)` with the given `h`. Not taken from any reference
    /// model; it is simply a smooth, bounded, non-constant choice.
    pub fn rational(h: VolMap) -> Result<Self> {
        Self::rational_with(2.0, 1.0, h)
    }

    /// `q(z) = base + amplitude/(1+z²)`.
    pub fn rational_with(base: f64, amplitude: f64, h: VolMap) -> Result<Self> {
        let lo = base.min(base + amplitude);
        let hi = base.max(base + amplitude);
        let hb = h_bounds_of(&h)?;
        Self::new(
            VolOfVol::Rational { base, amplitude },
            h,
            (lo, hi),
            hb,
            RATIONAL_DECAY * amplitude.abs(),
        )
    }

    /// Replaces `h`, recomputing its bounds for the preset shapes.
    pub fn with_h(mut self, h: VolMap) -> Result<Self> {
        self.h_bounds = h_bounds_of(&h)?;
        self.h = h;
        Ok(self)
    }

    pub fn q_min(&self) -> f64 {
        self.q_bounds.0
    }

    pub fn q_max(&self) -> f64 {
        self.q_bounds.1
    }

    pub fn h_max(&self) -> f64 {
        self.h_bounds.1
    }
}

fn h_bounds_of(h: &VolMap) -> Result<(f64, f64)> {
    match h {
        VolMap::Constant(c) => Ok((*c, *c)),
        VolMap::ClampAbs { min, max } => Ok((*min, *max)),
        VolMap::Custom(_) => Err(Error::InvalidParameter(
            "custom h needs explicit bounds; use VolSpec::new".into(),
        )),
    }
}

/// One failed bound in an [`Assumption1Report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub point: f64,
    pub quantity: String,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Spot-checks the regularity assumption on `q` (and the declared `h`
/// bounds) at every probe point.
///
/// At each point: `m_q <= q <= M_q`, `h_min <= h <= h_max`, and
/// `|q⁽ⁿ⁾(x)|(1+|x|) <= c_d` for `n = 1, 2, 3`.
pub fn validate_assumption1(spec: &VolSpec, probe_grid: &[f64]) -> Result<Assumption1Report> {
    if probe_grid.is_empty() {
        return Err(Error::Input("probe grid is empty".into()));
    }
    let (mq, big_mq) = spec.q_bounds;
    let (hmin, hmax) = spec.h_bounds;
    let mut violations = Vec::new();
    let mut push = |point: f64, quantity: &str, observed: f64, bound: f64| {
        violations.push(Violation { point, quantity: quantity.to_string(), observed, bound })
    };
    for &x in probe_grid {
        if !x.is_finite() {
            return Err(Error::Input(format!("probe point {x} is not finite")));
        }
        let d = spec.q.eval(x);
        for (n, v) in d.iter().enumerate() {
            if !v.is_finite() {
                let quantity = if n == 0 { "q".to_string() } else { format!("q^({n})") };
                return Err(Error::Evaluation { quantity, point: x });
            }
        }
        let h = spec.h.value(x);
        if !h.is_finite() {
            return Err(Error::Evaluation { quantity: "h".into(), point: x });
        }

        if d[0] < mq {
            push(x, "q >= m_q", d[0], mq);
        }
        if d[0] > big_mq {
            push(x, "q <= M_q", d[0], big_mq);
        }
        let weight = 1.0 + x.abs();
        for (n, label) in [(1, "|q'|(1+|x|)"), (2, "|q''|(1+|x|)"), (3, "|q'''|(1+|x|)")] {
            let scaled = d[n].abs() * weight;
            if scaled > spec.derivative_decay {
                push(x, label, scaled, spec.derivative_decay);
            }
        }
        if h < hmin {
            push(x, "h >= h_min", h, hmin);
        }
        if h > hmax {
            push(x, "h <= h_max", h, hmax);
        }
    }
    Ok(Assumption1Report { passed: violations.is_empty(), violations })
}

/// `|ρ - ξρ₃ρ₁ρ₂| <= ξ √(1-ρ₁²) √(1-ρ₂²)`, compared with `<=` and no slack.
pub fn check_correlation_condition(c: &CoefficientVector) -> bool {
    let (lhs, rhs) = correlation_condition_sides(c);
    lhs <= rhs
}

/// Both sides of the correlation condition, for error reporting.
pub fn correlation_condition_sides(c: &CoefficientVector) -> (f64, f64) {
    let lhs = (c.rho - standard_rho(c.xi, c.rho1, c.rho2, c.rho3)).abs();
    let rhs = c.xi * (1.0 - c.rho1 * c.rho1).sqrt() * (1.0 - c.rho2 * c.rho2).sqrt();
    (lhs, rhs)
}

/// Cross coefficient when each asset's idiosyncratic noises share a common
/// component: `W = w1·W̃ + √(1-w1²)Z`, `B = b1·B̃ + √(1-b1²)Z`.
///
/// Fails when `w1` or `b1` is zero (the construction degenerates there) or
/// lies outside `[-1, 1]`.
pub fn effective_rho(c: &CoefficientVector, w1: f64, b1: f64) -> Result<f64> {
    for (name, v) in [("w1", w1), ("b1", b1)] {
        if !v.is_finite() || v.abs() > 1.0 {
            return Err(Error::Domain(format!("{name} must lie in [-1,1], got {v}")));
        }
        if v == 0.0 {
            return Err(Error::Domain(format!("{name} = 0 is excluded")));
        }
    }
    let base = standard_rho(c.xi, c.rho1, c.rho2, c.rho3);
    let extra = c.xi
        * (1.0 - c.rho1 * c.rho1).sqrt()
        * (1.0 - c.rho2 * c.rho2).sqrt()
        * (1.0 - w1 * w1).sqrt()
        * (1.0 - b1 * b1).sqrt();
    Ok(base + extra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_q_passes() {
        let spec = VolSpec::ornstein_uhlenbeck(1.0, 0.3).unwrap();
        let r = validate_assumption1(&spec, &grid(-50.0, 50.0, 101)).unwrap();
        assert!(r.passed);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn rational_preset_passes() {
        let spec = VolSpec::rational(VolMap::Constant(0.3)).unwrap();
        assert_eq!(spec.q_bounds, (2.0, 3.0));
        let r = validate_assumption1(&spec, &grid(-10.0, 10.0, 2001)).unwrap();
        assert!(r.passed, "{:?}", r.violations);
    }

    #[test]
    fn rational_derivatives_match_finite_differences() {
        let q = VolOfVol::Rational { base: 2.0, amplitude: 1.0 };
        let h = 1e-5;
        for &z in &[-3.0, -0.7, 0.0, 0.4, 1.3, 5.0] {
            let d = q.eval(z);
            for n in 1..4 {
                let fd = (q.eval(z + h)[n - 1] - q.eval(z - h)[n - 1]) / (2.0 * h);
                assert_relative_eq!(d[n], fd, epsilon = 1e-7, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn unbounded_q_flags_upper_bound() {
        let q = VolOfVol::custom(|z: f64| {
            let s = (z.abs() + 0.01).sqrt();
            let sg = z.signum();
            [s, sg * 0.5 / s, -0.25 / (s * s * s), sg * 0.375 / s.powi(5)]
        });
        let spec = VolSpec::new(q, VolMap::Constant(0.3), (0.1, 5.0), (0.3, 0.3), 10.0).unwrap();
        let mut probe = grid(-10.0, 10.0, 21);
        probe.push(100.0);
        let r = validate_assumption1(&spec, &probe).unwrap();
        assert!(!r.passed);
        let v = r
            .violations
            .iter()
            .find(|v| v.quantity == "q <= M_q")
            .expect("upper bound violation");
        assert_eq!(v.point, 100.0);
        assert!(v.observed > 10.0);
    }

    #[test]
    fn non_finite_evaluation_names_point() {
        let q = VolOfVol::custom(|z: f64| [1.0 / z, 0.0, 0.0, 0.0]);
        let spec = VolSpec::new(q, VolMap::Constant(0.3), (0.1, 5.0), (0.3, 0.3), 1.0).unwrap();
        let err = validate_assumption1(&spec, &[1.0, 0.0]).unwrap_err();
        assert_eq!(err, Error::Evaluation { quantity: "q".into(), point: 0.0 });
    }

    #[test]
    fn correlation_condition_examples() {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.5);
        assert!(check_correlation_condition(&c));

        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.0).with_rho(0.5);
        let (lhs, rhs) = correlation_condition_sides(&c);
        assert_relative_eq!(rhs, 0.4 * 0.91f64.sqrt() * 0.96f64.sqrt());
        assert!(lhs > rhs);
        assert!(!check_correlation_condition(&c));

        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.0, 0.0, 0.5).with_rho(0.1);
        assert!(check_correlation_condition(&c));
    }

    #[test]
    fn effective_rho_examples() {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 0.5);
        assert_relative_eq!(effective_rho(&c, 1.0, 1.0).unwrap(), 0.012, epsilon = 1e-15);
        let c = CoefficientVector::standard(1.0, 0.2, 1.0, 0.05, 0.0, 0.0, 0.0);
        assert_relative_eq!(effective_rho(&c, 0.6, 0.6).unwrap(), 0.64, epsilon = 1e-15);
        assert!(matches!(effective_rho(&c, 0.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(effective_rho(&c, 0.5, 0.0), Err(Error::Domain(_))));
        assert!(matches!(effective_rho(&c, 1.5, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn validation_names_invariant() {
        let c = CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 1.5, 0.2, 0.5);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("rho1 ∈ (-1,1)"), "{msg}");
        assert!(CoefficientVector::standard(1.0, 0.2, 0.4, 0.05, 0.3, 0.2, 1.0).validate().is_ok());
    }

    proptest! {
        #[test]
        fn correlation_condition_sign_flip_invariant(
            xi in 0.0f64..2.0, r1 in -0.99f64..0.99, r2 in -0.99f64..0.99,
            r3 in -1.0f64..1.0, rho in -2.0f64..2.0,
        ) {
            let a = CoefficientVector::standard(1.0, 0.1, xi, 0.0, r1, r2, r3).with_rho(rho);
            let b = CoefficientVector::standard(1.0, 0.1, xi, 0.0, -r1, -r2, r3).with_rho(rho);
            prop_assert_eq!(check_correlation_condition(&a), check_correlation_condition(&b));
        }

        #[test]
        fn effective_rho_at_unit_loadings_is_standard(
            xi in 0.0f64..2.0, r1 in -0.99f64..0.99, r2 in -0.99f64..0.99, r3 in -1.0f64..1.0,
        ) {
            let c = CoefficientVector::standard(1.0, 0.1, xi, 0.0, r1, r2, r3);
            prop_assert_eq!(effective_rho(&c, 1.0, 1.0).unwrap(), xi * r3 * r1 * r2);
            prop_assert_eq!(effective_rho(&c, -1.0, 1.0).unwrap(), xi * r3 * r1 * r2);
        }

        #[test]
        fn adding_probe_points_never_repairs_a_failure(
            extra in proptest::collection::vec(-200.0f64..200.0, 0..20),
        ) {
            let spec = VolSpec::rational_with(2.0, 1.0, VolMap::Constant(0.3)).unwrap();
            // Tighten c_d so the base grid fails.
            let spec = VolSpec { derivative_decay: 1.0, ..spec };
            let base = grid(-5.0, 5.0, 51);
            let before = validate_assumption1(&spec, &base).unwrap();
            prop_assume!(!before.passed);
            let mut more = base.clone();
            more.extend(extra);
            let after = validate_assumption1(&spec, &more).unwrap();
            prop_assert!(!after.passed);
            prop_assert!(after.violations.len() >= before.violations.len());
        }
    }
}
