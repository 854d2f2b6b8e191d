//! Central-difference gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerical gradient of a scalar function by central differences.
///
/// The divisor is the actual distance between the two perturbed inputs after
/// rounding to `T`, not `2 * eps`, which removes most of the representation
/// error of `x ± eps` in single precision.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> f64,
    x: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        let hi = orig + T::from_f64_lossy(eps);
        let lo = orig - T::from_f64_lossy(eps);
        probe.data_mut()[i] = hi;
        let f_hi = f(&probe);
        probe.data_mut()[i] = lo;
        let f_lo = f(&probe);
        probe.data_mut()[i] = orig;
        if !f_hi.is_finite() || !f_lo.is_finite() {
            return Err(Error::OracleFailure(format!(
                "f is not finite around element {i} ({f_lo}, {f_hi})"
            )));
        }
        grad.push(T::from_f64_lossy((f_hi - f_lo) / (hi - lo).as_f64()));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), grad))
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-6)`.
pub fn max_relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative error of differently shaped tensors");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let (x, y) = (x.as_f64(), y.as_f64());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|&v| (v as f64).powi(2)).sum(), &x, 1e-3)
            .unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-4, "{g:?}");
        assert!((g.data()[1] - 4.0).abs() < 1e-4, "{g:?}");
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let x = Tensor::<f32>::new(&[1], vec![0.0]).unwrap();
        let g = finite_diff_grad(|t| 1.0 / (1.0 + (-(t.data()[0] as f64)).exp()), &x, 1e-3)
            .unwrap();
        assert!((g.data()[0] - 0.25).abs() < 1e-4, "{g:?}");
    }

    #[test]
    fn non_finite_is_an_oracle_failure() {
        let x = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let err = finite_diff_grad(|t| t.data()[0].ln(), &x, 1e-3);
        assert!(matches!(err, Err(Error::OracleFailure(_))));
        assert!(finite_diff_grad(|_| 0.0, &x, 0.0).is_err());
    }

    #[test]
    fn relative_error_floor() {
        // tiny values are measured against the 1e-6 floor, not each other
        let a = Tensor::<f64>::new(&[2], vec![1e-9, 1.0]).unwrap();
        let b = Tensor::<f64>::new(&[2], vec![2e-9, 1.0005]).unwrap();
        let e = max_relative_error(&a, &b);
        assert!((e - 1e-3).abs() < 1e-9, "{e}");
        let a = Tensor::<f64>::new(&[1], vec![1.0]).unwrap();
        let b = Tensor::<f64>::new(&[1], vec![1.001]).unwrap();
        assert!((max_relative_error(&a, &b) - 0.001 / 1.001).abs() < 1e-9);
    }
}
