//! Coefficient field abstraction.
//!
//! Everything in the crate is generic over [`Scalar`]. The exact
//! instance is [`Rational`]; `f64` is supported for quick numerical
//! experiments but zero tests then become tolerance tests.

use std::fmt::{Debug, Display};
use std::ops::Neg;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

pub trait Scalar:
    Clone + Debug + Display + PartialEq + Num + Neg<Output = Self> + Send + Sync + 'static
{
    fn from_int(v: i64) -> Self;

    fn from_frac(num: i64, den: i64) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    /// Exact zero for exact fields, small magnitude for floats.
    fn is_negligible(&self) -> bool;

    /// Size used for pivot selection.
    fn magnitude(&self) -> f64;

    /// Canonical text form, `"p/q"` for rationals.
    fn render(&self) -> String;

    fn parse_scalar(s: &str) -> Option<Self>;

    fn sqrt_exact(&self) -> Option<Self>;

    /// Numerator and denominator, for fields that carry them exactly.
    fn as_fraction(&self) -> Option<(BigInt, BigInt)> {
        None
    }

    fn from_bigints(num: &BigInt, den: &BigInt) -> Self;

    /// Size of the largest absolute numerator, reported by residual checks.
    fn height(&self) -> f64 {
        self.magnitude()
    }
}

impl Scalar for Rational {
    fn from_int(v: i64) -> Self {
        Rational::from_integer(BigInt::from(v))
    }

    fn is_negligible(&self) -> bool {
        self.is_zero()
    }

    fn magnitude(&self) -> f64 {
        self.abs().to_f64().unwrap_or(f64::INFINITY)
    }

    fn render(&self) -> String {
        format!("{}/{}", self.numer(), self.denom())
    }

    fn parse_scalar(s: &str) -> Option<Self> {
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n: BigInt = n.trim().parse().ok()?;
                let d: BigInt = d.trim().parse().ok()?;
                if d.is_zero() {
                    return None;
                }
                Some(Rational::new(n, d))
            }
            None => {
                let n: BigInt = s.parse().ok()?;
                Some(Rational::from_integer(n))
            }
        }
    }

    fn sqrt_exact(&self) -> Option<Self> {
        if self.is_negative() {
            return None;
        }
        let n = self.numer().sqrt();
        let d = self.denom().sqrt();
        if &(&n * &n) == self.numer() && &(&d * &d) == self.denom() {
            Some(Rational::new(n, d))
        } else {
            None
        }
    }

    fn as_fraction(&self) -> Option<(BigInt, BigInt)> {
        Some((self.numer().clone(), self.denom().clone()))
    }

    fn from_bigints(num: &BigInt, den: &BigInt) -> Self {
        Rational::new(num.clone(), den.clone())
    }

    fn height(&self) -> f64 {
        self.numer().abs().to_f64().unwrap_or(f64::INFINITY)
    }
}

impl Scalar for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }

    fn is_negligible(&self) -> bool {
        self.abs() < 1e-9
    }

    fn magnitude(&self) -> f64 {
        self.abs()
    }

    fn render(&self) -> String {
        format!("{self}")
    }

    fn parse_scalar(s: &str) -> Option<Self> {
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Some(n.trim().parse::<f64>().ok()? / d.trim().parse::<f64>().ok()?),
            None => s.parse().ok(),
        }
    }

    fn from_bigints(num: &BigInt, den: &BigInt) -> Self {
        num.to_f64().unwrap_or(f64::NAN) / den.to_f64().unwrap_or(f64::NAN)
    }

    fn sqrt_exact(&self) -> Option<Self> {
        (*self >= 0.0).then(|| self.sqrt())
    }
}

/// Shorthand for building exact constants in tests and presets.
pub fn q(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int<T: Scalar>(v: i64) -> T {
    T::from_int(v)
}

pub fn frac<T: Scalar>(num: i64, den: i64) -> T {
    T::from_frac(num, den)
}

pub fn double_factorial<T: Scalar>(n: i64) -> T {
    let mut acc = T::one();
    let mut k = n;
    while k > 1 {
        acc = acc * T::from_int(k);
        k -= 2;
    }
    acc
}
