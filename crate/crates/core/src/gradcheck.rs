//! Central-difference gradient checker.
//!
//! Every hand-written backward pass in this crate is verified against
//! `(f(x + eps) - f(x - eps)) / (2 eps)` in double precision. The checker is
//! deliberately dumb: it perturbs one flattened parameter entry at a time
//! and compares against the analytic gradient produced by the backward
//! functions.

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst observed entry of a gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` per entry,
/// maximized over all entries of the flattened parameter vector.
///
/// `loss` must be a pure forward evaluation; `analytic_grad` runs the
/// hand-written backward pass at the unperturbed point.
pub fn gradient_check(
    params: &[f64],
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    mut analytic_grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    eps: f64,
) -> Result<GradReport> {
    let analytic = analytic_grad(params)?;
    if analytic.len() != params.len() {
        return Err(Error::shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let saved = work[i];
        work[i] = saved + eps;
        let up = loss(&work)?;
        work[i] = saved - eps;
        let down = loss(&work)?;
        work[i] = saved;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("gradient_check loss"));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(x) = sum(x_i^2), df/dx_i = 2 x_i
        let params = vec![0.5, -1.25, 2.0];
        let report = gradient_check(
            &params,
            |p| Ok(p.iter().map(|v| v * v).sum()),
            |p| Ok(p.iter().map(|v| 2.0 * v).collect()),
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.passes(1e-9), "err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let params = vec![0.5, -1.25, 2.0];
        let report = gradient_check(
            &params,
            |p| Ok(p.iter().map(|v| v * v).sum()),
            |p| {
                let mut g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
                g[1] += 0.1; // deliberately wrong
                Ok(g)
            },
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(!report.passes(1e-4));
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let params = vec![1.0];
        let res = gradient_check(
            &params,
            |_| Ok(f64::NAN),
            |_| Ok(vec![0.0]),
            DEFAULT_EPS,
        );
        assert!(res.is_err());
    }
}
