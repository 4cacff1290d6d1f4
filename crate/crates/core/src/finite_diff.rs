//! Central finite-difference tools for checking analytic partials.
//!
//! These routines only ever call the function being differentiated, so they
//! are independent of the analytic derivative code they are used to verify.

/// Step for a central difference at `x`: cube root of machine epsilon,
/// scaled by the magnitude of the variable (or `typical` if larger).
pub fn central_step(x: f64, typical: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(typical.abs()).max(f64::MIN_POSITIVE)
}

/// Derivative of a scalar function of one variable.
pub fn derivative(f: impl Fn(f64) -> f64, x: f64, typical: f64) -> f64 {
    let h = central_step(x, typical);
    // Make the step exactly representable so (x+h)-(x-h) == 2h.
    let xp = x + h;
    let xm = x - h;
    (f(xp) - f(xm)) / (xp - xm)
}

/// Richardson-extrapolated central difference (fourth order).
pub fn derivative_richardson(f: impl Fn(f64) -> f64, x: f64, typical: f64) -> f64 {
    let h = f64::EPSILON.powf(0.2) * x.abs().max(typical.abs()).max(f64::MIN_POSITIVE);
    let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
    let d2 = (f(x + 2.0 * h) - f(x - 2.0 * h)) / (4.0 * h);
    (4.0 * d1 - d2) / 3.0
}

/// Fourth-order central difference with a caller-chosen step `h`, for
/// functions whose curvature scale is known.
pub fn richardson(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d1 = (f(x + h) - f(x - h)) / (2.0 * h);
    let d2 = (f(x + 2.0 * h) - f(x - 2.0 * h)) / (4.0 * h);
    (4.0 * d1 - d2) / 3.0
}

/// Dense Jacobian of a vector function, `jac[i][j] = d f_i / d x_j`.
///
/// `typical` gives a magnitude per variable used to size the step; pass an
/// empty slice to use `max(1, |x_j|)`.
pub fn jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], typical: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut xp = x.to_vec();
    for j in 0..n {
        let t = typical.get(j).copied().unwrap_or(1.0);
        let h = central_step(x[j], t);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        let dx = (x[j] + h) - (x[j] - h);
        xp[j] = x[j];
        for i in 0..m {
            jac[i][j] = (fp[i] - fm[i]) / dx;
        }
    }
    jac
}

/// Relative discrepancy between an analytic value and its finite-difference
/// estimate. Entries smaller than `floor` in magnitude are compared
/// absolutely against `floor`.
pub fn relative_error(analytic: f64, estimate: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(estimate.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - estimate).abs() / denom
    }
}

/// Worst relative error between two dense matrices, normalizing each entry
/// by the larger of its own magnitude and `row_floor * max|row|`.
pub fn max_relative_error(analytic: &[Vec<f64>], estimate: &[Vec<f64>], row_floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, re) in analytic.iter().zip(estimate) {
        let row_max = ra
            .iter()
            .chain(re.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let floor = (row_floor * row_max).max(f64::MIN_POSITIVE);
        for (a, e) in ra.iter().zip(re) {
            worst = worst.max(relative_error(*a, *e, floor));
        }
    }
    worst
}
