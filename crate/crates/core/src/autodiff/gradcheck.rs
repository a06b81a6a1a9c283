//! Central finite-difference gradient checks.

use super::Tensor;
use crate::error::Result;

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(param index, element index, analytic, numeric)` of the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares backpropagated gradients of `loss` against central differences with
/// step `h`, perturbing every element of every tensor in `params` (or at most
/// `max_per_param` evenly spaced elements of each when given).
pub fn check_gradients(
    params: &[Tensor],
    loss: impl Fn() -> Result<Tensor>,
    h: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    loss()?.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let stride = match max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        let original = p.to_vec();
        for i in (0..n).step_by(stride) {
            let mut x = original.clone();
            x[i] = original[i] + h;
            p.set_data(&x);
            let plus = loss()?.item();
            x[i] = original[i] - h;
            p.set_data(&x);
            let minus = loss()?.item();
            p.set_data(&original);
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[pi][i], numeric);
            report.checked += 1;
            if err >= report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((pi, i, analytic[pi][i], numeric));
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}
