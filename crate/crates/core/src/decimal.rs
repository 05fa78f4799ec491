//! Exact rational arithmetic on user-supplied decimal fractions.
//!
//! Rates such as `alpha = 0.1` or `train_fraction = 0.8` are written by people
//! as decimals. Multiplying their binary approximation by an integer and then
//! taking a ceiling or floor can land one off (`0.29 * 100 = 28.999…`). Here the
//! shortest round-trip decimal expansion of the `f64` is taken as the intended
//! value and the product is evaluated with big integers.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

/// A nonnegative decimal number `numer / 10^scale`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Decimal {
    numer: BigUint,
    denom: BigUint,
}

impl Decimal {
    /// Parses the shortest round-trip representation of `value`.
    ///
    /// Returns `None` for negative, NaN or infinite input.
    pub(crate) fn from_f64(value: f64) -> Option<Self> {
        if !value.is_finite() || value < 0.0 {
            return None;
        }
        // `Display` for f64 never uses exponent notation and is round-trip exact.
        let text = format!("{value}");
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text.as_str(), ""),
        };
        let digits = format!("{int_part}{frac_part}");
        let numer = BigUint::parse_bytes(digits.as_bytes(), 10)?;
        let denom = BigUint::from(10u32).pow(frac_part.len() as u32);
        Some(Self { numer, denom })
    }

    /// `1 - self`, or `None` when `self > 1`.
    pub(crate) fn complement(&self) -> Option<Self> {
        if self.numer > self.denom {
            return None;
        }
        Some(Self {
            numer: &self.denom - &self.numer,
            denom: self.denom.clone(),
        })
    }

    /// `ceil(n * self)`, saturating at `u64::MAX`.
    pub(crate) fn ceil_mul(&self, n: u64) -> u64 {
        let product = &self.numer * BigUint::from(n);
        let (q, r) = (&product / &self.denom, &product % &self.denom);
        let q = if r.is_zero() { q } else { q + 1u32 };
        q.to_u64().unwrap_or(u64::MAX)
    }

    /// `floor(n * self)`, saturating at `u64::MAX`.
    pub(crate) fn floor_mul(&self, n: u64) -> u64 {
        let product = &self.numer * BigUint::from(n);
        (product / &self.denom).to_u64().unwrap_or(u64::MAX)
    }
}
