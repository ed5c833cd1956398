//! Arithmetic backends.
//!
//! All solvers in this crate are generic over [`Scalar`], instantiated either
//! with exact [`BigRational`] arithmetic (decisions, golden values, witness
//! verification) or with `f64` (Monte-Carlo throughput). Exact mode keeps
//! strict inequalities meaningful; float mode keeps a million reachability
//! solves cheap.

use std::cmp::Ordering;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num::bigint::{BigInt, Sign};
use num::traits::ToPrimitive;
use num::{BigRational, One, Signed, Zero};

use crate::error::{Error, Result};

/// Field operations needed by the generic solvers.
pub trait Scalar:
    Clone
    + Debug
    + PartialEq
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// True when arithmetic is exact (no comparison tolerances apply).
    const EXACT: bool;

    fn from_rational(r: &BigRational) -> Self;

    /// Exact for the rational backend (every finite f64 is dyadic).
    fn from_f64(x: f64) -> Self;

    fn from_usize(k: usize) -> Self;

    fn to_f64(&self) -> f64;

    /// Magnitude used for pivot selection.
    fn pivot_weight(&self) -> f64 {
        self.to_f64().abs()
    }

    fn is_positive_value(&self) -> bool {
        *self > Self::zero()
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_rational(r: &BigRational) -> Self {
        rational_to_f64(r)
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn from_usize(k: usize) -> Self {
        k as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }

    fn from_usize(k: usize) -> Self {
        BigRational::from_integer(BigInt::from(k))
    }

    fn to_f64(&self) -> f64 {
        rational_to_f64(self)
    }
}

/// Lossy conversion for reporting; exact decisions never go through here.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.numer()
        .to_f64()
        .and_then(|n| r.denom().to_f64().map(|d| n / d))
        .unwrap_or_else(|| {
            // Fall back to a scaled division when either side overflows f64.
            let scaled = (r * BigInt::from(1u64 << 53)).to_integer();
            ToPrimitive::to_f64(&scaled).unwrap_or(f64::NAN) / (1u64 << 53) as f64
        })
}

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Canonical text form: `n/d` reduced, bare integer when the denominator is 1.
pub fn rational_to_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `n`, `n/d` or a decimal literal (optionally with an exponent) into
/// an exact rational. Decimal input converts exactly, e.g. `0.25` -> 1/4.
pub fn parse_rational(text: &str) -> Result<BigRational> {
    let s = text.trim();
    if s.is_empty() {
        return Err(Error::BadProbability(text.to_string()));
    }
    if let Some((n, d)) = s.split_once('/') {
        let numer: BigInt = n
            .trim()
            .parse()
            .map_err(|_| Error::BadProbability(text.to_string()))?;
        let denom: BigInt = d
            .trim()
            .parse()
            .map_err(|_| Error::BadProbability(text.to_string()))?;
        if denom.is_zero() {
            return Err(Error::BadProbability(text.to_string()));
        }
        return Ok(BigRational::new(numer, denom));
    }
    parse_decimal(s).ok_or_else(|| Error::BadProbability(text.to_string()))
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exp10) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i64 = s[pos + 1..].parse().ok()?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (Sign::Minus, rest),
        None => (Sign::Plus, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let joined = format!("{int_part}{frac_part}");
    let mut numer: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined.parse().ok()?
    };
    if sign == Sign::Minus {
        numer = -numer;
    }
    let shift = exp10 - frac_part.len() as i64;
    let ten = BigInt::from(10);
    Some(if shift >= 0 {
        BigRational::from_integer(numer * num::pow(ten, shift as usize))
    } else {
        BigRational::new(numer, num::pow(ten, (-shift) as usize))
    })
}

/// Exact conversion: every finite f64 is a dyadic rational.
pub fn rational_from_f64(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::BadProbability(format!("{x}")))
}

/// Square root of a nonnegative rational when the result is again rational.
pub fn exact_sqrt(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().sqrt();
    let d = r.denom().sqrt();
    if &(&n * &n) == r.numer() && &(&d * &d) == r.denom() {
        Some(BigRational::new(n, d))
    } else {
        None
    }
}

/// Total order on f64 used for deterministic sorting of samples.
pub fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}
