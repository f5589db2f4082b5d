//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{AstnError, Result};

pub const DEFAULT_EPS: f64 = 1e-4;

/// Where the largest disagreement was found.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences over every coordinate of `params`.
///
/// `build` receives a fresh tape and one `Var` per parameter and must
/// return the scalar loss. It is called once with tracked parameters and
/// twice per coordinate with constant ones.
pub fn finite_difference_check<B>(params: &[Tensor<f64>], eps: f64, build: B) -> Result<GradCheckReport>
where
    B: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    finite_difference_check_with(params, eps, build, |_, _| {})
}

/// Like [`finite_difference_check`], but lets the caller tamper with the
/// analytic gradients before comparison (used to confirm the harness
/// catches a broken backward).
pub fn finite_difference_check_with<B, T>(
    params: &[Tensor<f64>],
    eps: f64,
    mut build: B,
    mut tamper: T,
) -> Result<GradCheckReport>
where
    B: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
    T: FnMut(usize, &mut [f64]),
{
    if !(eps > 0.0) {
        return Err(AstnError::Config(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.variable(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;
    let mut analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("variables track gradients"))
        .collect();
    for (i, g) in analytic.iter_mut().enumerate() {
        tamper(i, g);
    }

    let mut eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|p| t.constant(p.clone())).collect();
        let out = build(&mut t, &vs)?;
        let v = t.value(out).item();
        if !v.is_finite() {
            return Err(AstnError::NonFinite("finite-difference evaluation".into()));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(grad[j], numeric);
            if err > report.max_relative_error || (pi == 0 && j == 0) {
                report = GradCheckReport {
                    max_relative_error: err,
                    worst_param: pi,
                    worst_index: j,
                    analytic: grad[j],
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
