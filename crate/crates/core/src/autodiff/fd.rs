use alloc::format;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Magnitude below which [`relative_error`] switches to absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

/// Central-difference gradient of `f` at `params`, one coordinate at a time.
pub fn finite_difference_grad(mut f: impl FnMut(&Tensor) -> f64, params: &Tensor, eps: f64) -> Result<Tensor> {
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = params.clone();
    let mut grad = Tensor::zeros(params.shape());
    for i in 0..params.len() {
        let x = params.data()[i];
        probe.data_mut()[i] = x + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = x - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}: f(+)={plus}, f(-)={minus}")));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Largest coordinate-wise `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
///
/// Shapes must agree; a mismatch yields `f64::INFINITY`.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    if analytic.shape() != numeric.shape() {
        return f64::INFINITY;
    }
    analytic.data().iter().zip(numeric.data()).fold(0.0, |worst, (&a, &n)| {
        let scale = math::abs(a).max(math::abs(n)).max(REL_ERR_FLOOR);
        let e = math::abs(a - n) / scale;
        if e > worst || e.is_nan() {
            e
        } else {
            worst
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_difference_grad(|p| p.data()[0] * p.data()[0], &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn constant_gives_zero() {
        let p = Tensor::column(alloc::vec![1.0, -2.0, 0.5]);
        let g = finite_difference_grad(|_| 4.2, &p, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_objective_is_error() {
        let err = finite_difference_grad(|p| 1.0 / (p.data()[0] - 1e-6), &Tensor::scalar(0.0), 1e-6).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert!(finite_difference_grad(|_| 0.0, &Tensor::scalar(0.0), 0.0).is_err());
    }

    #[test]
    fn relative_error_uses_floor() {
        let a = Tensor::column(alloc::vec![1.0, 1e-9]);
        let n = Tensor::column(alloc::vec![1.0 + 1e-8, 2e-9]);
        // the second entry is judged against the floor: 1e-9 / 1e-4
        let e = relative_error(&a, &n);
        assert!((e - 1e-5).abs() < 1e-12, "{e}");
        let big = relative_error(&Tensor::scalar(1.0), &Tensor::scalar(1.0 + 1e-8));
        assert!((big - 1e-8).abs() < 1e-12, "{big}");
    }
}
