//! Exact text encoding of `f64` as C99-style hexadecimal floating point
//! (`0x1.8p+1`, `-0x1.999999999999ap-4`, `0x0p+0`).

use std::fmt;

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const MANTISSA_BITS: u32 = 52;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;

/// Formats a finite value. Non-finite values format as `nan`/`inf` and are
/// rejected by [`parse`].
pub fn format(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & MANTISSA_MASK;
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 {
        (0, -1022)
    } else {
        (1, exp_bits - 1023)
    };
    let mut digits = format!("{mantissa:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{digits}")
    };
    format!("{sign}0x{lead}{frac}p{exp:+}")
}

/// Parses the output of [`format`]. Only the canonical shapes it emits are
/// accepted: `0x0p+0` or `0x{0,1}[.hex{1,13}]p±exp`.
pub fn parse(s: &str) -> Result<f64> {
    let bad = || Error::Checkpoint(format!("malformed hex float {s:?}"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let body = body.strip_prefix("0x").ok_or_else(bad)?;
    let (mant, exp) = body.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp.parse().map_err(|_| bad())?;
    let (lead, frac) = match mant.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mant, ""),
    };
    if frac.len() > 13 || (!frac.is_empty() && !frac.bytes().all(|b| b.is_ascii_hexdigit())) {
        return Err(bad());
    }
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).map_err(|_| bad())? << (4 * (13 - frac.len()))
    };
    let sign_bit = if neg { 1u64 << 63 } else { 0 };
    let bits = match lead {
        "0" => {
            if frac_bits == 0 {
                if exp != 0 {
                    return Err(bad());
                }
                sign_bit
            } else {
                if exp != -1022 {
                    return Err(bad());
                }
                sign_bit | frac_bits
            }
        }
        "1" => {
            if !(-1022..=1023).contains(&exp) {
                return Err(bad());
            }
            sign_bit | (((exp + 1023) as u64) << MANTISSA_BITS) | frac_bits
        }
        _ => return Err(bad()),
    };
    Ok(f64::from_bits(bits))
}

/// A vector of finite reals that serializes as an array of hex-float strings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HexVec(pub Vec<f64>);

impl Serialize for HexVec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for v in &self.0 {
            seq.serialize_element(&format(*v))?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for HexVec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = HexVec;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an array of hex-float strings")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<HexVec, A::Error> {
                let mut out = Vec::with_capacity(seq.size_hint().unwrap_or(0));
                while let Some(s) = seq.next_element::<String>()? {
                    out.push(parse(&s).map_err(de::Error::custom)?);
                }
                Ok(HexVec(out))
            }
        }
        deserializer.deserialize_seq(V)
    }
}

/// A single finite real serialized as a hex-float string.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Hex(pub f64);

impl Serialize for Hex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&format(self.0))
    }
}

impl<'de> Deserialize<'de> for Hex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse(&s).map(Hex).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
        assert_eq!(format(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
        assert_eq!(format(f64::MAX), "0x1.fffffffffffffp+1023");
    }

    #[test]
    fn rejects_garbage() {
        for s in [
            "",
            "1.0",
            "0x",
            "0x1.gp+0",
            "0x2p+0",
            "nan",
            "inf",
            "0x1p+1024",
            "0x0p+3",
        ] {
            assert!(parse(s).is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn round_trips_bitwise(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), v.to_bits());
        }
    }
}
