//! Numerical checking helpers shared by the test suites.

/// |a − b| scaled by max(1, |a|, |b|): relative error for large magnitudes,
/// absolute near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest [`rel_err`] over two equally long slices.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "comparing slices of different lengths");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Central finite differences (f(x+h) − f(x−h)) / 2h, one coordinate at a
/// time, restoring the original value exactly between probes.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let fp = f(&xs);
        xs[i] = orig - h;
        let fm = f(&xs);
        xs[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_is_absolute_near_zero() {
        assert_eq!(rel_err(0.0, 1e-6), 1e-6);
        assert!((rel_err(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn numeric_grad_of_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5];
        let g = numeric_grad(f, &x, 1e-5);
        let want = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&g, &want) < 1e-9);
    }
}
