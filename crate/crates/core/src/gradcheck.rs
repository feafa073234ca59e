//! Central finite-difference gradient verification.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares the analytic gradient returned by `f` against central
/// differences, entry by entry.
///
/// `f` maps `x` to `(value, analytic gradient w.r.t. x)` and must be pure.
/// Returns the largest `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    let (value, analytic) = f(x)?;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("f(x) = {value}")));
    }
    if analytic.shape() != x.shape() {
        return Err(Error::dim("grad_check", analytic.shape(), x.shape()));
    }

    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite value perturbing entry {i}")));
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
