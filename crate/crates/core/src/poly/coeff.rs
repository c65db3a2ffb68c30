use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{Num, Signed};

/// Scalar types usable as polynomial coefficients.
pub trait Coefficient: Clone + Debug + PartialEq + PartialOrd + Num + Signed + Send + Sync + 'static {
    /// Whether a stored term with this coefficient should be dropped.
    fn is_negligible(&self) -> bool;

    fn from_u32(n: u32) -> Self;

    /// Parses a numeric literal from polynomial text.
    fn parse_literal(s: &str) -> Option<Self>;

    /// Round-trippable text form of the magnitude.
    fn format(&self) -> String;

    fn to_f64(&self) -> f64;
}

/// Absolute drop tolerance for `f64` coefficients.
pub const F64_DROP_TOL: f64 = 1e-14;

impl Coefficient for f64 {
    fn is_negligible(&self) -> bool {
        self.abs() < F64_DROP_TOL
    }

    fn from_u32(n: u32) -> Self {
        n as f64
    }

    fn parse_literal(s: &str) -> Option<Self> {
        s.parse().ok()
    }

    fn format(&self) -> String {
        format!("{self:?}")
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Coefficient for f32 {
    fn is_negligible(&self) -> bool {
        self.abs() < 1e-7
    }

    fn from_u32(n: u32) -> Self {
        n as f32
    }

    fn parse_literal(s: &str) -> Option<Self> {
        s.parse().ok()
    }

    fn format(&self) -> String {
        format!("{self:?}")
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Coefficient for Rational64 {
    fn is_negligible(&self) -> bool {
        *self.numer() == 0
    }

    fn from_u32(n: u32) -> Self {
        Rational64::from_integer(n as i64)
    }

    /// Integers and exact decimals such as `0.125`.
    fn parse_literal(s: &str) -> Option<Self> {
        if s.contains(['e', 'E']) {
            return None;
        }
        match s.split_once('.') {
            None => s.parse::<i64>().ok().map(Rational64::from_integer),
            Some((int, frac)) => {
                let digits = format!("{int}{frac}");
                let numer: i64 = digits.parse().ok()?;
                let denom = 10i64.checked_pow(frac.len() as u32)?;
                Some(Rational64::new(numer, denom))
            }
        }
    }

    fn format(&self) -> String {
        self.to_string()
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }
}
