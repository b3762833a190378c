use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_relative_error: f64,
    /// Relative error per parameter, in flat parameter order.
    pub errors: Vec<f64>,
    /// Set when the loss could not be evaluated to a finite value.
    pub failure: Option<String>,
}

impl GradReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failure.is_none() && self.max_relative_error <= tolerance
    }

    fn failed(reason: String) -> Self {
        Self {
            max_relative_error: f64::INFINITY,
            errors: Vec::new(),
            failure: Some(reason),
        }
    }
}

/// Central finite-difference check of `loss_builder` at `params`.
///
/// `loss_builder` returns the loss and its analytic gradient. The relative
/// error uses the denominator `max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(loss_builder: F, params: &[f64], eps: f64) -> Result<GradReport>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Input(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let (loss, analytic) = loss_builder(params)?;
    if !loss.is_finite() {
        return Ok(GradReport::failed(format!("loss is {loss} at the base point")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Input(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut work = params.to_vec();
    let mut errors = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        work[i] = params[i] + eps;
        let (up, _) = loss_builder(&work)?;
        work[i] = params[i] - eps;
        let (down, _) = loss_builder(&work)?;
        work[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Ok(GradReport::failed(format!(
                "loss is non-finite when perturbing parameter {i}"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = 1f64.max(analytic[i].abs()).max(numeric.abs());
        errors.push((analytic[i] - numeric).abs() / denom);
    }
    let max_relative_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradReport {
        max_relative_error,
        errors,
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_is_nearly_exact() {
        let build = |p: &[f64]| Ok((0.5 * p.iter().map(|x| x * x).sum::<f64>(), p.to_vec()));
        let report = grad_check(build, &[1.0, -2.0, 0.25], 1e-5).unwrap();
        assert!(report.max_relative_error < 1e-7);
        assert!(report.errors.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn eps_range_enforced() {
        let build = |p: &[f64]| Ok((p[0], vec![1.0]));
        assert!(grad_check(build, &[0.0], 1e-2).is_err());
        assert!(grad_check(build, &[0.0], 1e-9).is_err());
    }

    #[test]
    fn non_finite_loss_reports_failure() {
        let build = |p: &[f64]| Ok((p[0].ln(), vec![1.0 / p[0]]));
        let report = grad_check(build, &[-1.0], 1e-5).unwrap();
        assert!(report.failure.is_some());
        assert!(!report.passed(1.0));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let build = |p: &[f64]| Ok((p[0] * p[0], vec![p[0]]));
        let report = grad_check(build, &[3.0], 1e-5).unwrap();
        assert!(report.max_relative_error > 0.4);
    }
}
