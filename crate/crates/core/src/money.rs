//! Exact two-decimal currency amounts.
//!
//! All prices, budgets and costs are held as integer cents so that equality
//! checks (a `DEAL` must copy the prior offer bit-exactly) never drift. Ratios
//! and rewards are computed in `f64` at the boundary via [`Money::as_f64`].

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A non-negative-or-negative amount of US dollars, stored as whole cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("empty amount")]
    Empty,
    #[error("malformed amount {0:?}")]
    Malformed(String),
    #[error("amount {0:?} has more than two decimal places")]
    TooPrecise(String),
    #[error("amount {0:?} is out of range")]
    Overflow(String),
}

impl Money {
    pub const ZERO: Money = Money(0);
    pub const CENT: Money = Money(1);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn from_dollars(dollars: i64) -> Self {
        Money(dollars * 100)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    /// Largest multiple of `tick` that is `<= dollars`.
    pub fn floor_to(dollars: f64, tick: Money) -> Money {
        let tick = tick.0.max(1);
        // Nudge by a tiny epsilon so values like 56.0 * 0.5 that land a hair
        // under an exact cent boundary do not lose a whole cent.
        let cents = (dollars * 100.0 + 1e-6).floor() as i64;
        Money(cents.div_euclid(tick) * tick)
    }

    /// Smallest multiple of `tick` that is `>= dollars`.
    pub fn ceil_to(dollars: f64, tick: Money) -> Money {
        let tick = tick.0.max(1);
        let cents = (dollars * 100.0 - 1e-6).ceil() as i64;
        Money((cents + tick - 1).div_euclid(tick) * tick)
    }

    /// Renders like Python's `str(float)` for a cent amount: `70.0`, `70.5`,
    /// `469.99`. Used where prompt text mirrors the dataset rendering.
    pub fn to_short_decimal(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let (whole, frac) = (abs / 100, abs % 100);
        if frac == 0 {
            format!("{sign}{whole}.0")
        } else if frac % 10 == 0 {
            format!("{sign}{whole}.{}", frac / 10)
        } else {
            format!("{sign}{whole}.{frac:02}")
        }
    }

    /// Parses `$1,234.5`, `1234.50`, `$10` and similar. Leading/trailing
    /// whitespace is ignored; at most two decimals are accepted.
    pub fn parse(text: &str) -> Result<Money, MoneyError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(MoneyError::Empty);
        }
        let body = trimmed.strip_prefix('$').unwrap_or(trimmed);
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, Some(f)),
            None => (body, None),
        };
        if whole.is_empty()
            || !whole.starts_with(|c: char| c.is_ascii_digit())
            || !whole.chars().all(|c| c.is_ascii_digit() || c == ',')
            || whole.ends_with(',')
            || whole.contains(",,")
        {
            return Err(MoneyError::Malformed(text.to_string()));
        }
        let digits: String = whole.chars().filter(|c| *c != ',').collect();
        let whole_cents = digits
            .parse::<i64>()
            .ok()
            .and_then(|w| w.checked_mul(100))
            .ok_or_else(|| MoneyError::Overflow(text.to_string()))?;
        let frac_cents = match frac {
            None => 0,
            Some(f) if f.is_empty() || !f.chars().all(|c| c.is_ascii_digit()) => {
                return Err(MoneyError::Malformed(text.to_string()))
            }
            Some(f) if f.len() > 2 => return Err(MoneyError::TooPrecise(text.to_string())),
            Some(f) if f.len() == 1 => f.parse::<i64>().unwrap() * 10,
            Some(f) => f.parse::<i64>().unwrap(),
        };
        whole_cents.checked_add(frac_cents).map(Money).ok_or_else(|| MoneyError::Overflow(text.to_string()))
    }
}

impl fmt::Display for Money {
    /// Canonical form: `$` followed by exactly two decimals.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}${}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = MoneyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Money::parse(s)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Money::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_dataset_style_amounts() {
        assert_eq!(Money::parse("$469.99").unwrap(), Money::from_cents(46999));
        assert_eq!(Money::parse("$10").unwrap(), Money::from_cents(1000));
        assert_eq!(Money::parse("35").unwrap(), Money::from_cents(3500));
        assert_eq!(Money::parse(" $1,234.5 ").unwrap(), Money::from_cents(123450));
    }

    #[test]
    fn rejects_malformed_amounts() {
        for bad in ["", "$", "ten", "$1.234", "$.50", "1,", "$1..2", "-5", "$1,,000", "1.x"] {
            assert!(Money::parse(bad).is_err(), "{bad:?} should not parse");
        }
    }

    #[test]
    fn short_decimal_matches_float_rendering() {
        assert_eq!(Money::from_cents(7000).to_short_decimal(), "70.0");
        assert_eq!(Money::from_cents(7050).to_short_decimal(), "70.5");
        assert_eq!(Money::from_cents(46999).to_short_decimal(), "469.99");
        assert_eq!(Money::from_cents(7005).to_short_decimal(), "70.05");
    }

    #[test]
    fn tick_rounding_is_conservative() {
        let dollar = Money::from_dollars(1);
        assert_eq!(Money::floor_to(0.893 * 56.0, dollar), Money::from_dollars(50));
        assert_eq!(Money::floor_to(0.893 * 56.0, Money::CENT), Money::from_cents(5000));
        assert_eq!(Money::ceil_to(23.241, Money::CENT), Money::from_cents(2325));
        assert_eq!(Money::ceil_to(23.24, dollar), Money::from_dollars(24));
        assert_eq!(Money::floor_to(28.0, Money::CENT), Money::from_cents(2800));
    }

    proptest! {
        #[test]
        fn canonical_text_round_trips(cents in 0i64..10_000_000_000) {
            let m = Money::from_cents(cents);
            prop_assert_eq!(Money::parse(&m.to_string()).unwrap(), m);
        }
    }
}
