//! C99 `%a`-style hexadecimal float encoding for `f64`.
//!
//! The instance file format stores couplings and beta in this form so that a
//! save/load round trip is bit-exact without depending on decimal
//! shortest-round-trip behavior. Encoding: `[-]0x1.<frac>p<exp>` for normal
//! values, `[-]0x0.<frac>p-1022` for subnormals, `[-]0x0p+0` for zero.

use crate::error::{Error, Result};

/// Encode a finite `f64` exactly.
pub fn encode(x: f64) -> Result<String> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("cannot encode non-finite value {x}")));
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && frac == 0 {
        return Ok(format!("{sign}0x0p+0"));
    }
    let (lead, exp) = if exp_bits == 0 {
        ('0', -1022)
    } else {
        ('1', exp_bits - 1023)
    };
    // 52 fraction bits = 13 hex digits, highest-order first.
    let mut hex = format!("{frac:013x}");
    while hex.len() > 1 && hex.ends_with('0') {
        hex.pop();
    }
    if frac == 0 {
        Ok(format!("{sign}0x{lead}p{exp:+}"))
    } else {
        Ok(format!("{sign}0x{lead}.{hex}p{exp:+}"))
    }
}

/// Decode the output of [`encode`]. Accepts any C99 hex-float spelling of a
/// finite `f64` whose mantissa fits in 53 bits.
pub fn decode(s: &str) -> Result<f64> {
    let err = |msg: &str| Error::invalid(format!("bad hex float {s:?}: {msg}"));
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest
        .strip_prefix("0x")
        .or_else(|| rest.strip_prefix("0X"))
        .ok_or_else(|| err("missing 0x prefix"))?;
    let (mant_str, exp_str) = rest
        .split_once(['p', 'P'])
        .ok_or_else(|| err("missing p exponent"))?;
    let exp: i32 = exp_str.parse().map_err(|_| err("bad exponent"))?;
    let (int_str, frac_str) = match mant_str.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mant_str, ""),
    };
    if int_str.is_empty() && frac_str.is_empty() {
        return Err(err("empty mantissa"));
    }
    let digits = format!("{int_str}{frac_str}");
    let mant = u64::from_str_radix(&digits, 16).map_err(|_| err("bad mantissa"))?;
    if mant >> 57 != 0 {
        return Err(err("mantissa wider than 53 bits"));
    }
    // Value = mant * 2^(exp - 4*len(frac)). Both factors are exact; split the
    // power so each `powi` stays in range.
    let shift = exp - 4 * frac_str.len() as i32;
    let mut value = mant as f64;
    let (a, b) = if shift >= 0 {
        (shift.min(1000), shift - shift.min(1000))
    } else {
        (shift.max(-1000), shift - shift.max(-1000))
    };
    value *= 2f64.powi(a);
    if b != 0 {
        value *= 2f64.powi(b);
    }
    if !value.is_finite() {
        return Err(err("value overflows f64"));
    }
    Ok(if neg { -value } else { value })
}
