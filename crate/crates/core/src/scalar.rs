//! Scalar abstractions.
//!
//! Continuous code (latent features, recommender scores, organic choice
//! probabilities) is written against [`Real`], implemented for `f32` and
//! `f64`. Graph transition probabilities and the walk-probability solvers only
//! need field arithmetic, so they are written against [`Field`], which is also
//! satisfied by exact rationals.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, FromPrimitive, Num, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + FromStr + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for finite inputs.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Field arithmetic over which transition matrices and end-probability
/// tables are evaluated.
pub trait Field: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    fn from_count(n: u64) -> Self;

    /// Lossy view used by Monte-Carlo sampling and reporting.
    fn to_f64_lossy(&self) -> f64;
}

impl Field for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn to_f64_lossy(&self) -> f64 {
        *self
    }
}

impl Field for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn to_f64_lossy(&self) -> f64 {
        *self as f64
    }
}

impl Field for BigRational {
    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_counts_are_exact() {
        let third = BigRational::from_count(1) / BigRational::from_count(3);
        let sum = third.clone() + third.clone() + third;
        assert_eq!(sum, BigRational::from_count(1));
        assert!((BigRational::from_count(7).to_f64_lossy() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn literal_conversion() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::from_count(3), 3.0);
    }
}
