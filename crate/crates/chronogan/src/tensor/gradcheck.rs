//! Central-difference gradient oracle.
//!
//! Used by the test suite to validate every backward rule against
//! (f(x+ε) − f(x−ε)) / 2ε computed in 64-bit arithmetic.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Numerical gradient of a scalar-valued function at `params`.
///
/// `f` is re-evaluated 2·len(params) times with one element nudged by
/// ±`epsilon` each call. A non-finite function value is a domain error.
pub fn finite_diff_gradient<F: Real>(
    mut f: impl FnMut(&Tensor<F>) -> Result<F>,
    params: &Tensor<F>,
    epsilon: F,
) -> Result<Tensor<F>> {
    let mut work = params.clone();
    let mut grad = vec![F::zero(); params.size()];
    let two_eps = epsilon + epsilon;
    for i in 0..params.size() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + epsilon;
        let hi = f(&work)?;
        work.data_mut()[i] = orig - epsilon;
        let lo = f(&work)?;
        work.data_mut()[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::domain(
                "non-finite function value during finite differencing",
            ));
        }
        grad[i] = (hi - lo) / two_eps;
    }
    Tensor::new(params.shape().to_vec(), grad)
}

/// True when `got` matches `want` within `rel` relative error, with an
/// absolute floor `abs` for values near zero.
pub fn close(got: f64, want: f64, rel: f64, abs: f64) -> bool {
    let diff = (got - want).abs();
    diff <= abs || diff <= rel * got.abs().max(want.abs())
}

/// Largest pairwise violation between an analytic and a numeric gradient,
/// measured as |a−b| / max(|a|,|b|) after the absolute floor. Zero when all
/// entries agree.
pub fn worst_gap(analytic: &[f64], numeric: &[f64], abs: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= abs {
                0.0
            } else {
                diff / a.abs().max(n.abs()).max(abs)
            }
        })
        .fold(0.0, f64::max)
}
