/// `|a - n| / max(1e-12, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences of `f` around `theta` and
/// returns the worst per-coordinate relative error.
pub fn grad_check(
    theta: &[f64],
    analytic: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(
        theta.len(),
        analytic.len(),
        "one analytic gradient per coordinate"
    );
    let mut probe = theta.to_vec();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}
