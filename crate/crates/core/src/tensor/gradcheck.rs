//! Central finite-difference gradient verification.

use crate::error::Error;
use crate::Result;

/// Relative error with an absolute floor, so near-zero gradients are judged
/// on absolute error instead of noise amplification.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Central differences of a scalar function, perturbing each coordinate by
/// `h = 1e-5 * max(1, |x|)`. Errors if any evaluation is non-finite.
pub fn numeric_gradient<F>(mut f: F, x: &mut [f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = x[i];
        let h = 1e-5 * orig.abs().max(1.0);
        x[i] = orig + h;
        let hi = f(x)?;
        x[i] = orig - h;
        let lo = f(x)?;
        x[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::NonFinite("numeric gradient evaluation".into()));
        }
        grad[i] = (hi - lo) / (2.0 * h);
    }
    Ok(grad)
}

/// Compares an analytic gradient against central differences of `f` at `x`.
/// Returns the worst-coordinate relative error; `Ok` only when it is within
/// `tolerance`.
pub fn grad_check<F>(f: F, x: &mut [f64], analytic: &[f64], tolerance: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} coordinates, input has {}",
            analytic.len(),
            x.len()
        )));
    }
    let numeric = numeric_gradient(f, x)?;
    let err = max_rel_error(analytic, &numeric);
    if err <= tolerance {
        Ok(err)
    } else {
        let worst = analytic
            .iter()
            .zip(&numeric)
            .enumerate()
            .max_by(|a, b| {
                let ea = (a.1 .0 - a.1 .1).abs() / a.1 .0.abs().max(a.1 .1.abs()).max(1e-6);
                let eb = (b.1 .0 - b.1 .1).abs() / b.1 .0.abs().max(b.1 .1.abs()).max(1e-6);
                ea.partial_cmp(&eb).unwrap()
            })
            .map(|(i, (a, n))| format!("coordinate {i}: analytic {a}, numeric {n}"))
            .unwrap_or_default();
        Err(Error::Other(format!(
            "gradient check failed: max relative error {err:.3e} > {tolerance:.3e} ({worst})"
        )))
    }
}
