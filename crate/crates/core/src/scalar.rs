//! Scalar abstraction for the loss and metric arithmetic.
//!
//! Everything numeric in [`crate::loss`] and [`crate::eval::metrics`] is
//! written against [`Scalar`], so the same code runs in `f32`, `f64` or exact
//! rational arithmetic. Rationals are what the table-reproduction checks use:
//! several published values sit exactly on their rounding boundary, which
//! binary floating point cannot represent.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Numeric type usable by the loss kernel and the metric functions.
pub trait Scalar:
    Num + Copy + PartialOrd + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Slack allowed when checking that turn weights sum to one.
    fn sum_tolerance() -> Self;

    /// Converts a ratio of counts. Exact for rationals.
    fn from_counts(numerator: usize, denominator: usize) -> Self;

    /// Lossy conversion from `f64`; rationals approximate to a bounded denominator.
    fn from_f64_lossy(value: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn abs_diff(self, other: Self) -> Self {
        if self >= other {
            self - other
        } else {
            other - self
        }
    }

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f64 {
    fn sum_tolerance() -> Self {
        1e-9
    }

    fn from_counts(numerator: usize, denominator: usize) -> Self {
        numerator as f64 / denominator as f64
    }

    fn from_f64_lossy(value: f64) -> Self {
        value
    }
}

impl Scalar for f32 {
    fn sum_tolerance() -> Self {
        1e-6
    }

    fn from_counts(numerator: usize, denominator: usize) -> Self {
        numerator as f32 / denominator as f32
    }

    fn from_f64_lossy(value: f64) -> Self {
        value as f32
    }
}

impl Scalar for Ratio<i64> {
    fn sum_tolerance() -> Self {
        Ratio::from_integer(0)
    }

    fn from_counts(numerator: usize, denominator: usize) -> Self {
        Ratio::new(numerator as i64, denominator as i64)
    }

    /// Decimal-rounds to 12 places before converting, so `0.851` becomes
    /// exactly `851/1000` instead of the nearest binary fraction.
    fn from_f64_lossy(value: f64) -> Self {
        const SCALE: i64 = 1_000_000_000_000;
        let scaled = (value * SCALE as f64).round() as i64;
        Ratio::new(scaled, SCALE)
    }
}

/// Parses a decimal literal such as `"0.851"` into an exact rational.
pub fn parse_decimal(text: &str) -> Option<Ratio<i64>> {
    let text = text.trim();
    let (negative, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let denominator = 10i64.checked_pow(frac_part.len() as u32)?;
    let int_value: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let frac_value: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    let numerator = int_value.checked_mul(denominator)?.checked_add(frac_value)?;
    Some(Ratio::new(if negative { -numerator } else { numerator }, denominator))
}
