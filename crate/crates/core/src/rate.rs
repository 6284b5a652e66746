//! Exact rational thresholds and count-based accuracies.
//!
//! Threshold predicates such as `A(S \ t) >= A(S) + b` are evaluated on
//! cross-multiplied integer counts, never on floats.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// A non-negative rational number `num / den`, used for accuracy margins.
///
/// Parsed from decimal text (`"0.3"`, `"30%"`, `"2.5%"`) so the value is
/// exactly what the user wrote.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rate {
    num: u64,
    den: u64,
}

impl Rate {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "rate denominator must be positive");
        let g = gcd(num, den);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn zero() -> Self {
        Self { num: 0, den: 1 }
    }

    pub fn numer(self) -> u64 {
        self.num
    }

    pub fn denom(self) -> u64 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn halved(self) -> Self {
        if self.num.is_multiple_of(2) {
            Self::new(self.num / 2, self.den)
        } else {
            Self::new(self.num, self.den * 2)
        }
    }

    /// Converts through the shortest decimal representation of `value`,
    /// so `0.3_f64` becomes exactly `3/10`.
    pub fn from_f64(value: f64) -> Result<Self, Error> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidRate(value.to_string()));
        }
        format!("{value}").parse()
    }

    /// `0 < self < 1`.
    pub fn is_proper_fraction(self) -> bool {
        self.num > 0 && self.num < self.den
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::InvalidRate(s.to_string());
        let text = s.trim();
        let (text, percent) = match text.strip_suffix('%') {
            Some(rest) => (rest.trim_end(), true),
            None => (text, false),
        };
        if text.is_empty() {
            return Err(bad());
        }
        if text.contains(['e', 'E']) {
            let v: f64 = text.parse().map_err(|_| bad())?;
            let r: Rate = format!("{v}").parse()?;
            return Ok(if percent {
                Rate::new(r.num, r.den * 100)
            } else {
                r
            });
        }
        let (int_part, frac_part) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || (int_part.is_empty() && frac_part.is_empty())
            || frac_part.len() > 18
        {
            return Err(bad());
        }
        let digits = format!("{int_part}{frac_part}");
        let num: u64 = if digits.is_empty() {
            0
        } else {
            digits.parse().map_err(|_| bad())?
        };
        let mut den = 10u64.checked_pow(frac_part.len() as u32).ok_or_else(bad)?;
        if percent {
            den = den.checked_mul(100).ok_or_else(bad)?;
        }
        Ok(Rate::new(num, den))
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Rate::from_f64(v).map_err(serde::de::Error::custom)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

/// Accuracy over a finite group, kept as counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: u64,
    pub total: u64,
}

impl Accuracy {
    pub fn new(correct: u64, total: u64) -> Self {
        debug_assert!(correct <= total);
        Self { correct, total }
    }

    pub fn value(self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// `self - other >= margin`, computed exactly. Both groups must be nonempty.
    pub fn exceeds_by(self, other: Accuracy, margin: Rate) -> bool {
        debug_assert!(self.total > 0 && other.total > 0);
        let lhs = (i128::from(self.correct) * i128::from(other.total)
            - i128::from(other.correct) * i128::from(self.total))
            * i128::from(margin.den);
        let rhs = i128::from(margin.num) * i128::from(self.total) * i128::from(other.total);
        lhs >= rhs
    }

    /// Exact comparison of the two accuracy values.
    pub fn cmp_value(self, other: Accuracy) -> Ordering {
        let lhs = u128::from(self.correct) * u128::from(other.total);
        let rhs = u128::from(other.correct) * u128::from(self.total);
        lhs.cmp(&rhs)
    }
}
