//! Numeric abstraction for the closed-form stability and control math.
//!
//! The threshold formula, the capacity recursion and both control algorithms
//! are written once against [`Scalar`]. Floating-point types compare demand
//! against capacity with a small relative tolerance; exact rationals compare
//! exactly.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Real-like number usable by [`crate::stability`] and [`crate::control`].
pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Signed
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
{
    /// Relative tolerance used by `approx_lt`. Zero for exact types.
    fn relative_epsilon() -> Self;

    fn from_u32(n: u32) -> Self;

    /// Lossy for rationals only in the sense that the binary value of `x` is
    /// kept exactly (0.1 becomes 3602879701896397/36028797018963968).
    fn from_f64(x: f64) -> Self;

    fn to_f64(&self) -> f64;

    /// `self < other` with the type's relative tolerance applied to `other`.
    fn approx_lt(&self, other: &Self) -> bool {
        let slack = Self::relative_epsilon() * other.abs();
        *self < other.clone() - slack
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn relative_epsilon() -> Self {
        1e-9
    }

    fn from_u32(n: u32) -> Self {
        f64::from(n)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    // 1e-9 is below f32 resolution; use a few ulps instead.
    fn relative_epsilon() -> Self {
        4.0 * f32::EPSILON
    }

    fn from_u32(n: u32) -> Self {
        n as f32
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for BigRational {
    fn relative_epsilon() -> Self {
        BigRational::zero()
    }

    fn from_u32(n: u32) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite value")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Builds an exact rational `num / den`.
pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}
