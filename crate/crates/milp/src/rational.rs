//! Exact rational helpers shared by the solver and its callers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

/// Integer as a rational.
pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `num / den` as a reduced rational. Panics on a zero denominator.
pub fn ratio(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Converts a float through its shortest round-trip decimal representation,
/// so `0.3` becomes exactly `3/10` rather than the nearest binary fraction.
///
/// Returns `None` for NaN and infinities.
pub fn from_f64_decimal(x: f64) -> Option<Rational> {
    if !x.is_finite() {
        return None;
    }
    parse_decimal(&format!("{x}"))
}

/// Parses a decimal literal (`-12`, `0.25`, `1e-3`, `3.5E+2`) or a fraction
/// (`7/9`) into an exact rational.
pub fn parse_decimal(text: &str) -> Option<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let joined = format!("{int_part}{frac_part}");
    let mut numer: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined.parse().ok()?
    };
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Some(value)
}

/// Formats a rational as `p/q`, or `p` when integral.
pub fn to_fraction_string(x: &Rational) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// Parses the `p/q` form written by [`to_fraction_string`].
pub fn parse_fraction(text: &str) -> Option<Rational> {
    parse_decimal(text)
}

/// Number of significant digits used when a rational has no finite decimal
/// expansion.
pub const DECIMAL_DIGITS: usize = 20;

/// Decimal rendering: exact when the reduced denominator is of the form
/// 2^a 5^b, otherwise rounded to [`DECIMAL_DIGITS`] significant digits.
pub fn to_decimal_string(x: &Rational) -> String {
    if x.is_integer() {
        return x.numer().to_string();
    }
    let negative = x.is_negative();
    let abs = x.abs();
    let mut den = abs.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0usize;
    let mut fives = 0usize;
    while den.is_multiple_of(&two) {
        den /= &two;
        twos += 1;
    }
    while den.is_multiple_of(&five) {
        den /= &five;
        fives += 1;
    }
    let sign = if negative { "-" } else { "" };
    if den.is_one() {
        let places = twos.max(fives);
        let scaled = abs * Rational::from_integer(num_traits::pow(BigInt::from(10), places));
        let digits = scaled.to_integer().to_string();
        return format!("{sign}{}", insert_point(&digits, places));
    }
    // Non-terminating: round to a fixed number of significant digits.
    let int_digits = abs.to_integer().to_string();
    let lead = if abs >= Rational::one() {
        int_digits.len() as i64
    } else {
        // Count leading zeros after the decimal point.
        let mut probe = abs.clone();
        let mut zeros = 0i64;
        let ten = Rational::from_integer(BigInt::from(10));
        while probe < Rational::one() {
            probe *= &ten;
            zeros += 1;
        }
        1 - zeros
    };
    let places = (DECIMAL_DIGITS as i64 - lead).max(0) as usize;
    let scaled = abs * Rational::from_integer(num_traits::pow(BigInt::from(10), places));
    let rounded = scaled.round().to_integer().to_string();
    let text = insert_point(&rounded, places);
    let text = if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    };
    format!("{sign}{text}")
}

fn insert_point(digits: &str, places: usize) -> String {
    if places == 0 {
        return digits.to_string();
    }
    let padded = if digits.len() <= places {
        format!("{}{}", "0".repeat(places - digits.len() + 1), digits)
    } else {
        digits.to_string()
    };
    let split = padded.len() - places;
    format!("{}.{}", &padded[..split], &padded[split..])
}

/// Lossy conversion for reporting.
pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
