//! Central-difference gradient oracle.
//!
//! Second-order accurate and implementation-independent; every analytic
//! gradient in this crate is checked against it.

use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Central-difference gradient of a scalar function at `x` with step `h`.
///
/// Errors when `h <= 0` or when an evaluation returns a non-finite value,
/// naming the offending coordinate.
pub fn finite_diff_grad<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step size {h} must be positive")));
    }
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x[i];
        probe[i] = xi + h;
        let fp = f(&probe);
        probe[i] = xi - h;
        let fm = f(&probe);
        probe[i] = xi;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function evaluation at coordinate {i} (f+ = {fp}, f- = {fm})"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}
