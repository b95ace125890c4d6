//! Central finite-difference helpers for gradient verification.
//!
//! These run the function under test at perturbed inputs and are deliberately
//! independent of the tape: agreement between the two is the evidence that
//! the analytic backward passes are right.

/// d/dt f(t) at t = 0 via central differences.
pub fn fd_directional<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Gradient of `f` at `x`, one central difference per coordinate.
pub fn fd_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let x0 = xp[i];
        xp[i] = x0 + h;
        let fp = f(&xp);
        xp[i] = x0 - h;
        let fm = f(&xp);
        xp[i] = x0;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// |a - b| relative to max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest relative error across two gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch {} vs {}", a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}
