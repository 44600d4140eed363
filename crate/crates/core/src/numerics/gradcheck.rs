//! Central finite-difference check of analytic gradients.

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic` against `(f(p + eps·e_i) - f(p - eps·e_i)) / 2eps` for
/// every coordinate and reports the worst relative error.
pub fn grad_check_flat<F>(mut loss: F, params: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    if params.len() != analytic.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let up = loss(&probe)?;
        probe[i] = params[i] - eps;
        let down = loss(&probe)?;
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::non_finite(format!("loss near coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}

/// Checks a loss over one network: `loss_fn` returns the value and its
/// analytic gradient.
pub fn grad_check<F>(loss_fn: F, params: &MlpParams, eps: f64) -> Result<f64>
where
    F: Fn(&MlpParams) -> Result<(f64, Gradients)>,
{
    let (_, grads) = loss_fn(params)?;
    let flat = params.flatten();
    let mut scratch = params.clone();
    let report = grad_check_flat(
        |p| {
            scratch.assign_flat(p)?;
            loss_fn(&scratch).map(|(v, _)| v)
        },
        &flat,
        &grads.flatten(),
        eps,
    )?;
    Ok(report.max_relative_error)
}
