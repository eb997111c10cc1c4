//! Small quadrature helpers shared by the solvers.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Trapezoid weights for an arbitrary increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    for i in 0..n - 1 {
        let h = 0.5 * (grid[i + 1] - grid[i]);
        w[i] += h;
        w[i + 1] += h;
    }
    w
}

/// Trapezoid weights of a uniform grid with `n` nodes and spacing `h`.
pub fn uniform_trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n >= 1 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    if n == 1 {
        w[0] = 0.0;
    }
    w
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Piecewise-linear interpolation on an increasing grid; `None` outside it.
pub fn interpolate(grid: &[f64], values: &[f64], x: f64) -> Option<f64> {
    let n = grid.len();
    if n == 0 || x < grid[0] || x > grid[n - 1] || x.is_nan() {
        return None;
    }
    if n == 1 {
        return Some(values[0]);
    }
    let i = match grid.partition_point(|&g| g <= x) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    };
    let (x0, x1) = (grid[i], grid[i + 1]);
    let s = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.0 };
    Some(values[i] + s * (values[i + 1] - values[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn simpson_is_accurate() {
        let v = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-13);
        assert_relative_eq!(v, std::f64::consts::E - 1.0, epsilon = 1e-12);
        let v = adaptive_simpson(&|x: f64| 1.0 / (1.0 + x * x), 0.0, 5.0, 1e-13);
        assert_relative_eq!(v, 5f64.atan(), epsilon = 1e-12);
        assert_eq!(adaptive_simpson(&|_| 1.0, 2.0, 2.0, 1e-12), 0.0);
        assert_relative_eq!(adaptive_simpson(&|_| 1.0, 2.0, -1.0, 1e-12), -3.0, epsilon = 1e-14);
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let g = [0.0, 0.1, 0.5, 0.6, 2.0];
        let w = trapezoid_weights(&g);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-15);
        let w = uniform_trapezoid_weights(11, 0.1);
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn interpolation_edges() {
        let g = [0.0, 1.0, 2.0];
        let v = [0.0, 10.0, 0.0];
        assert_eq!(interpolate(&g, &v, 0.5), Some(5.0));
        assert_eq!(interpolate(&g, &v, 2.0), Some(0.0));
        assert_eq!(interpolate(&g, &v, 2.5), None);
        assert_eq!(interpolate(&g, &v, -0.1), None);
    }
}
