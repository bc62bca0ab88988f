//! Exact rational helpers shared by the probability, solver and report code.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Number of significant digits used for every decimal rendering.
pub const SIG_DIGITS: usize = 12;

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Parses `n/d`, `n`, or a plain decimal such as `0.0099` exactly.
///
/// Decimal input is expanded digit by digit, so `0.1` becomes `1/10` rather
/// than the nearest binary double.
pub fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((n, d)) = text.split_once('/') {
        let (n, d) = (n.trim(), d.trim());
        if !is_digits(n) || !is_digits(d) {
            return None;
        }
        let den: BigInt = d.parse().ok()?;
        if den.is_zero() {
            return None;
        }
        return Some(BigRational::new(n.parse().ok()?, den));
    }
    let (whole, frac) = match text.split_once('.') {
        Some((w, f)) => (w, f),
        None => (text, ""),
    };
    if (whole.is_empty() && frac.is_empty())
        || !(whole.is_empty() || is_digits(whole))
        || !(frac.is_empty() || is_digits(frac))
        || (text.ends_with('.'))
    {
        return None;
    }
    let digits = format!("{whole}{frac}");
    let num: BigInt = digits.parse().ok()?;
    let den = num_traits::pow(BigInt::from(10u32), frac.len());
    Some(BigRational::new(num, den))
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// `p` for integers, `n/d` otherwise.
pub fn format_exact(value: &BigRational) -> String {
    if value.is_integer() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

/// Renders `value` as a fixed decimal with `digits` significant digits,
/// rounding half away from zero. No exponent form is ever produced, so the
/// output is identical on every platform.
pub fn format_sig(value: &BigRational, digits: usize) -> String {
    if value.is_zero() {
        return "0".to_string();
    }
    let negative = value.is_negative();
    let abs = value.abs();
    // exponent e such that 10^e <= abs < 10^(e+1)
    let mut exp = abs.numer().to_string().len() as i64 - abs.denom().to_string().len() as i64;
    loop {
        if pow10(exp) > abs {
            exp -= 1;
        } else if pow10(exp + 1) <= abs {
            exp += 1;
        } else {
            break;
        }
    }
    let scale = digits as i64 - 1 - exp;
    let scaled = &abs * pow10(scale);
    let mut mantissa = round_half_up(&scaled);
    let mut scale = scale;
    if mantissa.to_string().len() > digits {
        // rounding carried into a new digit, e.g. 9.99.. -> 10.0..
        mantissa /= BigInt::from(10u32);
        scale -= 1;
    }
    let mut text = mantissa.to_string();
    let rendered = if scale <= 0 {
        text.push_str(&"0".repeat((-scale) as usize));
        text
    } else {
        let scale = scale as usize;
        if text.len() <= scale {
            format!("0.{}{}", "0".repeat(scale - text.len()), text)
        } else {
            let split = text.len() - scale;
            format!("{}.{}", &text[..split], &text[split..])
        }
    };
    if negative {
        format!("-{rendered}")
    } else {
        rendered
    }
}

fn pow10(exp: i64) -> BigRational {
    let base = num_traits::pow(BigInt::from(10u32), exp.unsigned_abs() as usize);
    if exp >= 0 {
        BigRational::from_integer(base)
    } else {
        BigRational::new(BigInt::one(), base)
    }
}

fn round_half_up(value: &BigRational) -> BigInt {
    let (q, r) = value.numer().div_rem(value.denom());
    let twice = r.abs() * BigInt::from(2u32);
    if twice >= *value.denom() {
        match value.numer().sign() {
            Sign::Minus => q - 1,
            _ => q + 1,
        }
    } else {
        q
    }
}

/// Nearest integer, ties away from zero.
pub fn round(value: &BigRational) -> BigInt {
    round_half_up(value)
}

/// Lossy conversion for diagnostics only.
pub fn approx_f64(value: &BigRational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_fraction_and_decimal() {
        assert_eq!(parse_rational("1/101"), Some(ratio(1, 101)));
        assert_eq!(parse_rational("0.1"), Some(ratio(1, 10)));
        assert_eq!(parse_rational(".25"), Some(ratio(1, 4)));
        assert_eq!(parse_rational("3"), Some(ratio(3, 1)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("1."), None);
        assert_eq!(parse_rational("-1"), None);
        assert_eq!(parse_rational("1e-3"), None);
        assert_eq!(parse_rational(""), None);
    }

    #[test]
    fn sig_digit_rendering() {
        assert_eq!(format_sig(&ratio(1, 3), 12), "0.333333333333");
        assert_eq!(format_sig(&ratio(2, 3), 12), "0.666666666667");
        assert_eq!(format_sig(&ratio(1, 1), 12), "1.00000000000");
        assert_eq!(format_sig(&ratio(123456, 1), 3), "123000");
        assert_eq!(format_sig(&ratio(1, 1000), 2), "0.0010");
        assert_eq!(format_sig(&ratio(9999, 10000), 3), "1.00");
        assert_eq!(format_sig(&ratio(0, 1), 12), "0");
    }

    proptest! {
        #[test]
        fn exact_format_round_trips(n in 0u64..1_000_000, d in 1u64..1_000_000) {
            let value = BigRational::new(n.into(), d.into());
            prop_assert_eq!(parse_rational(&format_exact(&value)), Some(value));
        }
    }
}
