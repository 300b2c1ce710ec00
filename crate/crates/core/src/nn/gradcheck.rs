//! Central-difference verification of hand-written backward passes.

use crate::error::Result;
use crate::nn::ParamSet;
use crate::tensor::Tensor;

/// Result of a gradient check: the worst relative error and where it occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst: String,
    pub coordinates: usize,
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients against central differences over every
/// parameter coordinate and every input coordinate.
///
/// `f` maps `(params, input)` to `(loss, grad_params, grad_input)`.
pub fn grad_check<F>(params: &ParamSet<f64>, input: &Tensor<f64>, eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&ParamSet<f64>, &Tensor<f64>) -> Result<(f64, ParamSet<f64>, Tensor<f64>)>,
{
    let (_, grads, grad_input) = f(params, input)?;
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    let record = |name: String, analytic: f64, numeric: f64, report: &mut GradCheck| {
        let err = relative_error(analytic, numeric);
        report.coordinates += 1;
        if err > report.max_relative_error || report.worst.is_empty() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = format!("{name} (analytic {analytic:e}, numeric {numeric:e})");
        }
    };

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let analytic = grads.get(name)?.clone();
        let len = params.get(name)?.len();
        let mut probe = params.clone();
        for i in 0..len {
            let orig = probe.get(name)?.data()[i];
            probe.get_mut(name)?.data_mut()[i] = orig + eps;
            let (plus, _, _) = f(&probe, input)?;
            probe.get_mut(name)?.data_mut()[i] = orig - eps;
            let (minus, _, _) = f(&probe, input)?;
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            record(format!("{name}[{i}]"), analytic.data()[i], numeric, &mut report);
        }
    }

    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _, _) = f(params, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let (minus, _, _) = f(params, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        record(format!("input[{i}]"), grad_input.data()[i], numeric, &mut report);
    }
    Ok(report)
}
