//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::ScalarOperand;
use num_traits::{Float, NumAssign, NumCast};

/// Floating-point scalar the estimators are generic over.
///
/// Implemented for `f32` and `f64` through the blanket impl; `f64` is the
/// default everywhere (see the crate-level `Real` alias).
pub trait Scalar:
    Float + NumAssign + NumCast + ScalarOperand + Sum<Self> + Display + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + NumCast
        + ScalarOperand
        + Sum<T>
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from(x).expect("finite f64 constant must be representable")
}

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn log1p_exp<F: Scalar>(x: F) -> F {
    if x > real(35.0) {
        x
    } else if x < real(-35.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`.
#[inline]
pub fn expit<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Log-odds `log(p / (1 - p))`.
#[inline]
pub fn logit<F: Scalar>(p: F) -> F {
    (p / (F::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_logit_round_trip() {
        for &p in &[1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-6] {
            assert!((expit::<f64>(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn expit_matches_reference_values() {
        assert!((expit::<f64>(0.5) - 0.6224593312018546).abs() < 1e-15);
        assert_eq!(expit::<f64>(0.0), 0.5);
    }

    #[test]
    fn log1p_exp_tails() {
        assert!((log1p_exp::<f64>(800.0) - 800.0).abs() < 1e-12);
        assert!(log1p_exp::<f64>(-800.0).abs() < 1e-12);
        assert!((log1p_exp::<f64>(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn generic_over_f32() {
        let p: f32 = expit(0.5f32);
        assert!((p - 0.622_459_3).abs() < 1e-6);
    }
}
