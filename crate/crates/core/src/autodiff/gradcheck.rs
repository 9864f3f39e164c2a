//! Central finite differences for checking analytic gradients.

/// Relative tolerance used by [`agrees`].
pub const REL_TOL: f64 = 1e-3;
/// Absolute tolerance used by [`agrees`].
pub const ABS_TOL: f64 = 1e-6;

/// Estimates `d f / d x_i` for every coordinate with step `h`.
pub fn central_difference<F>(mut f: F, at: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = at.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// True when `analytic` is within `ABS_TOL` absolutely or `REL_TOL`
/// relatively of `numeric`.
pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let err = (analytic - numeric).abs();
    err <= ABS_TOL || err <= REL_TOL * numeric.abs().max(analytic.abs())
}

/// Largest coordinate mismatch, as `(index, analytic, numeric)`, if any
/// coordinate fails [`agrees`].
pub fn first_mismatch(analytic: &[f64], numeric: &[f64]) -> Option<(usize, f64, f64)> {
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .find(|(_, (a, n))| !agrees(**a, **n))
        .map(|(i, (a, n))| (i, *a, *n))
}
