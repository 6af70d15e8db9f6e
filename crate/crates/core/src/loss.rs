//! Per-sample regression losses.
//!
//! Losses average over output dimensions per sample and over the batch, so
//! the empirical risk is the plain mean of per-sample losses. The gradient
//! returned is per sample (not divided by the batch size); the network's
//! backward pass applies the batch mean.

use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `ℓ = (1/C) Σ_c (ŷ_c - y_c)^2`
    Mse,
    /// Smooth L1 with transition point `delta`, averaged over outputs.
    Huber { delta: f64 },
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Huber { .. } => "huber",
        }
    }
}

/// Mean loss over the batch and per-sample cotangent `∂ℓ_n/∂ŷ_n`.
pub fn loss_and_grad<T: Scalar>(
    kind: LossKind,
    pred: &Matrix<T>,
    target: &Matrix<T>,
) -> Result<(T, Matrix<T>)> {
    ensure!(
        pred.shape() == target.shape(),
        "prediction shape {:?} != target shape {:?}",
        pred.shape(),
        target.shape()
    );
    let (n, c) = pred.shape();
    ensure!(n > 0 && c > 0, "empty batch");
    let inv_c = T::one() / T::lit(c as f64);
    let mut grad = Matrix::zeros(n, c);
    let mut total = T::zero();
    for ((g, &p), &y) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let r = p - y;
        match kind {
            LossKind::Mse => {
                total += r * r;
                *g = T::lit(2.0) * r * inv_c;
            }
            LossKind::Huber { delta } => {
                let d = T::lit(delta);
                if r.abs() <= d {
                    total += T::lit(0.5) * r * r;
                    *g = r * inv_c;
                } else {
                    total += d * (r.abs() - T::lit(0.5) * d);
                    *g = d * r.signum() * inv_c;
                }
            }
        }
    }
    Ok((total * inv_c / T::lit(n as f64), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_value_and_gradient() {
        let p = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let y = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let (l, g) = loss_and_grad(LossKind::Mse, &p, &y).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn huber_is_linear_in_the_tails() {
        let p = Matrix::new(1, 1, vec![5.0]).unwrap();
        let y = Matrix::new(1, 1, vec![0.0]).unwrap();
        let (l, g) = loss_and_grad(LossKind::Huber { delta: 1.0 }, &p, &y).unwrap();
        assert_eq!(l, 4.5);
        assert_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = Matrix::<f64>::zeros(2, 1);
        let y = Matrix::<f64>::zeros(1, 2);
        assert!(loss_and_grad(LossKind::Mse, &p, &y).is_err());
    }
}
