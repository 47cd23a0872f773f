//! Central finite differences, the reference against which analytic
//! gradients are checked.

/// Magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Largest coordinatewise [`relative_error`]; infinite on length mismatch or NaN.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    if analytic.len() != numeric.len() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let e = relative_error(a, n);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}
