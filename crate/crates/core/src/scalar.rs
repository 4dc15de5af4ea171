//! Exact coefficients for linear forms.
//!
//! Every number the distance-function language can express is a rational
//! multiple of `1`, `√2` or `√3`. Keeping that structure exact lets the
//! skeleton code decide rationality of slopes and equality of lines without
//! floating-point guesswork.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use twofloat::TwoFloat;

/// The irrational unit a [`Scalar`] is a rational multiple of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surd {
    One,
    Sqrt2,
    Sqrt3,
}

impl Surd {
    fn radicand(self) -> u32 {
        match self {
            Surd::One => 1,
            Surd::Sqrt2 => 2,
            Surd::Sqrt3 => 3,
        }
    }
}

/// `coef · surd` with `coef` an exact rational.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scalar {
    coef: BigRational,
    surd: Surd,
}

impl Scalar {
    pub fn new(coef: BigRational, surd: Surd) -> Self {
        if coef.is_zero() {
            return Self::zero();
        }
        Self { coef, surd }
    }

    pub fn zero() -> Self {
        Self { coef: BigRational::zero(), surd: Surd::One }
    }

    pub fn integer(n: i64) -> Self {
        Self::rational(n, 1)
    }

    pub fn rational(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Self::new(BigRational::new(BigInt::from(num), BigInt::from(den)), Surd::One)
    }

    pub fn sqrt2() -> Self {
        Self::new(BigRational::one(), Surd::Sqrt2)
    }

    pub fn sqrt3() -> Self {
        Self::new(BigRational::one(), Surd::Sqrt3)
    }

    /// `1/√2 = √2/2`.
    pub fn inv_sqrt2() -> Self {
        Self::new(BigRational::new(BigInt::one(), BigInt::from(2)), Surd::Sqrt2)
    }

    /// The exact binary value of a finite float.
    pub fn from_f64(value: f64) -> Option<Self> {
        BigRational::from_float(value).map(|r| Self::new(r, Surd::One))
    }

    pub fn coef(&self) -> &BigRational {
        &self.coef
    }

    pub fn surd(&self) -> Surd {
        self.surd
    }

    pub fn is_zero(&self) -> bool {
        self.coef.is_zero()
    }

    pub fn is_rational(&self) -> bool {
        self.surd == Surd::One || self.is_zero()
    }

    pub fn signum(&self) -> i32 {
        match self.coef.cmp(&BigRational::zero()) {
            Ordering::Less => -1,
            Ordering::Equal => 0,
            Ordering::Greater => 1,
        }
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.coef.clone(), self.surd)
    }

    pub fn abs(&self) -> Self {
        Self::new(self.coef.abs(), self.surd)
    }

    pub fn to_f64(&self) -> f64 {
        self.to_twofloat().hi()
    }

    /// Double-double value; accurate to roughly 100 bits.
    pub fn to_twofloat(&self) -> TwoFloat {
        let c = rational_to_twofloat(&self.coef);
        match self.surd {
            Surd::One => c,
            s => c * TwoFloat::from(f64::from(s.radicand())).sqrt(),
        }
    }

    /// `self / other` when it is rational.
    pub fn ratio(&self, other: &Scalar) -> Option<BigRational> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(BigRational::zero());
        }
        (self.surd == other.surd).then(|| &self.coef / &other.coef)
    }

    /// `self / other` written as `c·√m` with `m ∈ {1, 2, 3, 6}`.
    pub fn ratio_surd(&self, other: &Scalar) -> Option<(BigRational, u32)> {
        if other.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some((BigRational::zero(), 1));
        }
        let c = &self.coef / &other.coef;
        let (a, b) = (self.surd.radicand(), other.surd.radicand());
        // √a/√b = √(ab)/b
        let m = a * b;
        let (m, c) = match m {
            1 | 2 | 3 | 6 => (m, c / BigRational::from_integer(BigInt::from(b))),
            4 => (1, c * BigRational::from_integer(BigInt::from(2)) / BigRational::from_integer(BigInt::from(b))),
            9 => (1, c * BigRational::from_integer(BigInt::from(3)) / BigRational::from_integer(BigInt::from(b))),
            _ => unreachable!(),
        };
        Some((c, m))
    }

    /// Exact product, as `c·√m` with `m ∈ {1, 2, 3, 6}`.
    pub fn mul_exact(&self, other: &Scalar) -> (BigRational, u32) {
        let c = &self.coef * &other.coef;
        if c.is_zero() {
            return (c, 1);
        }
        let m = self.surd.radicand() * other.surd.radicand();
        match m {
            4 => (c * BigRational::from_integer(BigInt::from(2)), 1),
            9 => (c * BigRational::from_integer(BigInt::from(3)), 1),
            m => (c, m),
        }
    }
}

pub(crate) fn rational_to_twofloat(r: &BigRational) -> TwoFloat {
    let hi = r.to_f64().unwrap_or(f64::NAN);
    if !hi.is_finite() {
        return TwoFloat::from(hi);
    }
    // Residual r - hi is exact as a rational; its float is the low word.
    let rem = match BigRational::from_float(hi) {
        Some(h) => (r - h).to_f64().unwrap_or(0.0),
        None => 0.0,
    };
    TwoFloat::new_add(hi, rem)
}

fn fmt_rational(r: &BigRational, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if r.is_integer() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for Scalar {
    /// Canonical spelling accepted back by the parser.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let token = match self.surd {
            Surd::One => return fmt_rational(&self.coef, f),
            Surd::Sqrt2 => "sqrt2",
            Surd::Sqrt3 => "sqrt3",
        };
        let abs = self.coef.abs();
        let sign = if self.coef.is_negative() { "-" } else { "" };
        if abs.is_one() {
            write!(f, "{sign}{token}")
        } else if self.surd == Surd::Sqrt2 && abs == BigRational::new(BigInt::one(), BigInt::from(2)) {
            write!(f, "{sign}invsqrt2")
        } else {
            fmt_rational(&self.coef, f)?;
            write!(f, "*{token}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surd_ratios_are_exact() {
        let a = Scalar::inv_sqrt2();
        let b = Scalar::sqrt2();
        assert_eq!(a.ratio(&b), Some(BigRational::new(1.into(), 2.into())));
        assert_eq!(Scalar::sqrt2().ratio(&Scalar::integer(1)), None);
        let (c, m) = Scalar::sqrt2().ratio_surd(&Scalar::sqrt3()).unwrap();
        assert_eq!(m, 6);
        assert_eq!(c, BigRational::new(1.into(), 3.into()));
        let (c, m) = Scalar::integer(1).ratio_surd(&Scalar::sqrt2()).unwrap();
        assert_eq!((c, m), (BigRational::new(1.into(), 2.into()), 2));
    }

    #[test]
    fn products_fold_squares() {
        assert_eq!(Scalar::sqrt2().mul_exact(&Scalar::inv_sqrt2()), (BigRational::one(), 1));
        assert_eq!(Scalar::sqrt2().mul_exact(&Scalar::sqrt3()).1, 6);
    }

    #[test]
    fn display_uses_tokens() {
        assert_eq!(Scalar::inv_sqrt2().neg().to_string(), "-invsqrt2");
        assert_eq!(Scalar::rational(6, 4).to_string(), "3/2");
        assert_eq!(Scalar::sqrt3().to_string(), "sqrt3");
        assert_eq!(Scalar::new(BigRational::from_integer(3.into()), Surd::Sqrt2).to_string(), "3*sqrt2");
    }

    #[test]
    fn twofloat_precision() {
        let s = Scalar::sqrt2().to_twofloat();
        let err = (s * s - TwoFloat::from(2.0)).abs();
        assert!(err.hi() < 1e-30);
        let third = Scalar::rational(1, 3).to_twofloat() * TwoFloat::from(3.0);
        assert!((third - TwoFloat::from(1.0)).abs().hi() < 1e-31);
    }
}
