use alloc::vec::Vec;


use crate::{Error, Result};

/// Compares an analytic gradient against central differences.
///
/// `loss_fn` returns `(loss, analytic_gradient)` at the given parameters.
/// The result is `max_i |analytic_i − numeric_i| / (|numeric_i| + 1e-12)`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::OutOfRange(alloc::format!("grad_check step {eps}")));
    }
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(params.len(), analytic.len()));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let (up, _) = loss_fn(&probe)?;
        probe[i] = params[i] - eps;
        let (down, _) = loss_fn(&probe)?;
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss { step: i });
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((analytic[i] - numeric).abs() / (numeric.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function() {
        let err = grad_check(|p| Ok((p.iter().sum(), vec![1.0; p.len()])), &[0.3, -1.0, 5.0], 1e-4).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn quadratic_function() {
        let f = |p: &[f64]| Ok((p.iter().map(|v| v * v).sum(), p.iter().map(|v| 2.0 * v).collect()));
        let err = grad_check(f, &[1.0, 2.0], 1e-5).unwrap();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let f = |p: &[f64]| Ok((p[0], vec![1.0]));
        assert!(grad_check(f, &[0.0], 0.0).is_err());
        assert!(grad_check(f, &[0.0], 0.1).is_err());
        let g = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(matches!(grad_check(g, &[0.0], 1e-4), Err(Error::NonFiniteLoss { .. })));
    }
}
