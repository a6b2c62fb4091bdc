//! Parametric `s/e/p/d` floating-point format descriptors.
//!
//! A format has one sign bit, `e` exponent bits, `p` explicit mantissa bits
//! and a flag telling whether denormals are kept or flushed to zero. The
//! layout is IEEE-style: exponent bias `2^(e-1) - 1`, the all-ones exponent
//! encodes infinities and NaN, the all-zeros exponent encodes zeros and
//! denormals.
//!
//! Values are carried as `f32` surrogates. Every format with `e <= 8` and
//! `p <= 23` embeds exactly into binary32, so a surrogate never loses bits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bit pattern of the canonical quiet NaN used for every format.
pub const CANONICAL_NAN_BITS: u32 = 0x7FC0_0000;

/// The canonical quiet NaN surrogate.
pub fn canonical_nan() -> f32 {
    f32::from_bits(CANONICAL_NAN_BITS)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormatError {
    #[error("malformed format spec {0:?}: expected 1/e/p/d or 1/e/p/n")]
    Parse(String),
    #[error("only one sign bit is supported, got {0}")]
    SignBits(u32),
    #[error("exponent width {0} outside supported range 2..=8")]
    ExpBits(u32),
    #[error("mantissa width {0} outside supported range 1..=23")]
    ManBits(u32),
    #[error("{value:e} is not exactly representable in {format}")]
    NotRepresentable { value: f32, format: FpFormat },
    #[error("format {0} is not 16 bits wide")]
    NotSixteenBits(FpFormat),
}

/// An `s/e/p/d` format descriptor. The sign width is always one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FpFormat {
    exp_bits: u8,
    man_bits: u8,
    denormals: bool,
}

impl FpFormat {
    /// IEEE binary16.
    pub const BINARY16: FpFormat = FpFormat::new_unchecked(5, 10, true);
    /// binary16 with flush-to-zero.
    pub const BINARY16_FTZ: FpFormat = FpFormat::new_unchecked(5, 10, false);
    /// 6 exponent bits, 9 mantissa bits, denormals kept.
    pub const E6M9: FpFormat = FpFormat::new_unchecked(6, 9, true);
    /// 6 exponent bits, 9 mantissa bits, flush-to-zero.
    pub const E6M9_FTZ: FpFormat = FpFormat::new_unchecked(6, 9, false);
    /// bfloat16 as used by TPUs (no denormals).
    pub const BFLOAT16_FTZ: FpFormat = FpFormat::new_unchecked(8, 7, false);
    /// IEEE binary32; rounding into it is the identity on `f32` surrogates.
    pub const BINARY32: FpFormat = FpFormat::new_unchecked(8, 23, true);

    const fn new_unchecked(exp_bits: u8, man_bits: u8, denormals: bool) -> Self {
        FpFormat {
            exp_bits,
            man_bits,
            denormals,
        }
    }

    pub fn new(exp_bits: u32, man_bits: u32, denormals: bool) -> Result<Self, FormatError> {
        if !(2..=8).contains(&exp_bits) {
            return Err(FormatError::ExpBits(exp_bits));
        }
        if !(1..=23).contains(&man_bits) {
            return Err(FormatError::ManBits(man_bits));
        }
        Ok(FpFormat::new_unchecked(exp_bits as u8, man_bits as u8, denormals))
    }

    pub fn exp_bits(self) -> u32 {
        self.exp_bits as u32
    }

    pub fn man_bits(self) -> u32 {
        self.man_bits as u32
    }

    pub fn denormals(self) -> bool {
        self.denormals
    }

    /// Total storage width including the sign bit.
    pub fn width(self) -> u32 {
        1 + self.exp_bits() + self.man_bits()
    }

    pub fn bias(self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    pub fn e_min(self) -> i32 {
        -((1 << (self.exp_bits - 1)) - 2)
    }

    pub fn e_max(self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    pub fn constants(self) -> FormatConstants {
        let p = self.man_bits() as i32;
        FormatConstants {
            e_min: self.e_min(),
            e_max: self.e_max(),
            min_denormal_exp: self.denormals.then(|| self.e_min() - p),
            min_normal_exp: self.e_min(),
            man_bits: self.man_bits(),
        }
    }

    /// Smallest positive normal value, `2^E_min`.
    pub fn min_normal(self) -> f32 {
        pow2(self.e_min()) as f32
    }

    /// Largest finite value, `(2 - 2^-p) * 2^E_max`.
    pub fn max_finite(self) -> f32 {
        self.constants().max_finite() as f32
    }

    /// Exact representability test for an `f32` surrogate. NaN and the
    /// infinities are representable in every format.
    pub fn is_representable(self, x: f32) -> bool {
        if !x.is_finite() || x == 0.0 {
            return true;
        }
        let (_, m, q) = decompose_f32(x);
        let top = q + (32 - m.leading_zeros() as i32) - 1;
        if top > self.e_max() {
            return false;
        }
        if top < self.e_min() && !self.denormals {
            return false;
        }
        let quantum = top.max(self.e_min()) - self.man_bits() as i32;
        if q >= quantum {
            return true;
        }
        let drop = (quantum - q) as u32;
        drop < 32 && m & ((1u32 << drop) - 1) == 0
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "1/{}/{}/{}",
            self.exp_bits,
            self.man_bits,
            if self.denormals { 'd' } else { 'n' }
        )
    }
}

impl FromStr for FpFormat {
    type Err = FormatError;

    /// Parses `1/e/p/d`, `1/e/p/n`, or the shorthand `1/e/p` (denormals on).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FormatError::Parse(s.to_string());
        let parts: Vec<&str> = s.trim().split('/').collect();
        if parts.len() != 3 && parts.len() != 4 {
            return Err(bad());
        }
        let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
        let sign = num(parts[0])?;
        if sign != 1 {
            return Err(FormatError::SignBits(sign));
        }
        let e = num(parts[1])?;
        let p = num(parts[2])?;
        let d = match parts.get(3).map(|t| t.trim()) {
            None | Some("d") => true,
            Some("n") => false,
            Some(_) => return Err(bad()),
        };
        FpFormat::new(e, p, d)
    }
}

impl Serialize for FpFormat {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FpFormat {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Derived constants of a format. Powers of two are stored by exponent so
/// they stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormatConstants {
    pub e_min: i32,
    pub e_max: i32,
    /// `E_min - p`; absent for flush-to-zero formats.
    pub min_denormal_exp: Option<i32>,
    pub min_normal_exp: i32,
    pub man_bits: u32,
}

impl FormatConstants {
    pub fn min_denormal(&self) -> Option<f64> {
        self.min_denormal_exp.map(pow2)
    }

    pub fn min_normal(&self) -> f64 {
        pow2(self.min_normal_exp)
    }

    pub fn max_finite(&self) -> f64 {
        (2.0 - pow2(-(self.man_bits as i32))) * pow2(self.e_max)
    }
}

/// Value classes. Zero is never counted as denormal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FpClass {
    Zero,
    Denormal,
    Normal,
    Infinity,
    NaN,
}

impl FpClass {
    pub const ALL: [FpClass; 5] = [
        FpClass::Zero,
        FpClass::Denormal,
        FpClass::Normal,
        FpClass::Infinity,
        FpClass::NaN,
    ];
}

impl fmt::Display for FpClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FpClass::Zero => "Zero",
            FpClass::Denormal => "Denormal",
            FpClass::Normal => "Normal",
            FpClass::Infinity => "Infinity",
            FpClass::NaN => "NaN",
        };
        f.write_str(s)
    }
}

/// Classifies a surrogate against `format`'s thresholds. Intended for values
/// already rounded into the format; finite magnitudes above the largest
/// finite value are reported as `Infinity`.
pub fn classify_f32(x: f32, format: FpFormat) -> FpClass {
    if x.is_nan() {
        return FpClass::NaN;
    }
    let a = x.abs();
    if a == 0.0 {
        FpClass::Zero
    } else if a < format.min_normal() {
        FpClass::Denormal
    } else if a <= format.max_finite() {
        FpClass::Normal
    } else {
        FpClass::Infinity
    }
}

/// A surrogate known to be exactly representable in its format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpValue {
    value: f32,
    format: FpFormat,
}

impl FpValue {
    pub fn new(value: f32, format: FpFormat) -> Result<Self, FormatError> {
        if !format.is_representable(value) {
            return Err(FormatError::NotRepresentable { value, format });
        }
        let value = if value.is_nan() { canonical_nan() } else { value };
        Ok(FpValue { value, format })
    }

    pub fn value(self) -> f32 {
        self.value
    }

    pub fn format(self) -> FpFormat {
        self.format
    }

    pub fn classify(self) -> FpClass {
        classify_f32(self.value, self.format)
    }

    /// Splits a finite nonzero value into `(negative, M, E)` with
    /// `|x| = M * 2^(E - p)` and `E_min <= E <= E_max`; `M` carries the hidden
    /// bit for normals.
    pub fn significand_exponent(self) -> Option<(bool, u32, i32)> {
        if !self.value.is_finite() || self.value == 0.0 {
            return None;
        }
        let (neg, m, q) = decompose_f32(self.value);
        let p = self.format.man_bits() as i32;
        let top = q + (32 - m.leading_zeros() as i32) - 1;
        let e = top.max(self.format.e_min());
        let shift = q - (e - p);
        let m = if shift >= 0 { m << shift } else { m >> -shift };
        Some((neg, m, e))
    }

    /// Encodes into the format's `width()`-bit word, right-aligned in a `u32`.
    pub fn to_bits(self) -> u32 {
        let fmt = self.format;
        let p = fmt.man_bits();
        let sign = (self.value.is_sign_negative() as u32) << (fmt.exp_bits() + p);
        let exp_ones = (1u32 << fmt.exp_bits()) - 1;
        if self.value.is_nan() {
            return (exp_ones << p) | (1 << (p - 1));
        }
        if self.value.is_infinite() {
            return sign | (exp_ones << p);
        }
        match self.significand_exponent() {
            None => sign,
            Some((_, m, e)) => {
                if m < (1 << p) {
                    sign | m
                } else {
                    let biased = (e + fmt.bias()) as u32;
                    sign | (biased << p) | (m - (1 << p))
                }
            }
        }
    }

    /// Decodes a `width()`-bit word. NaNs decode to the canonical NaN; in
    /// flush-to-zero formats denormal encodings decode to a signed zero.
    pub fn from_bits(word: u32, format: FpFormat) -> FpValue {
        let p = format.man_bits();
        let e = format.exp_bits();
        let neg = (word >> (e + p)) & 1 == 1;
        let biased = (word >> p) & ((1 << e) - 1);
        let man = word & ((1 << p) - 1);
        let sign = if neg { -1.0f64 } else { 1.0 };
        let value = if biased == (1 << e) - 1 {
            if man == 0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        } else if biased == 0 {
            if man == 0 || !format.denormals() {
                sign * 0.0
            } else {
                sign * man as f64 * pow2(format.e_min() - p as i32)
            }
        } else {
            let exp = biased as i32 - format.bias();
            sign * ((1u64 << p) + man as u64) as f64 * pow2(exp - p as i32)
        };
        let value = if value.is_nan() {
            canonical_nan()
        } else {
            value as f32
        };
        FpValue { value, format }
    }
}

/// Encodes a representable value of a 16-bit format.
pub fn encode16(v: FpValue) -> Result<u16, FormatError> {
    if v.format.width() != 16 {
        return Err(FormatError::NotSixteenBits(v.format));
    }
    Ok(v.to_bits() as u16)
}

pub fn decode16(word: u16, format: FpFormat) -> Result<FpValue, FormatError> {
    if format.width() != 16 {
        return Err(FormatError::NotSixteenBits(format));
    }
    Ok(FpValue::from_bits(word as u32, format))
}

/// Exact `2^k` for `-1022 <= k <= 1023`.
pub fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

/// Splits a finite nonzero `f32` into `(negative, m, q)` with `|x| = m * 2^q`.
pub(crate) fn decompose_f32(x: f32) -> (bool, u32, i32) {
    let bits = x.to_bits();
    let neg = bits >> 31 == 1;
    let biased = ((bits >> 23) & 0xFF) as i32;
    let frac = bits & 0x7F_FFFF;
    if biased == 0 {
        (neg, frac, -149)
    } else {
        (neg, frac | 0x80_0000, biased - 150)
    }
}

/// C99-style hexadecimal rendering, e.g. `0x1.8p-3`; exact for every `f32`.
pub fn hex_f32(x: f32) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{sign}inf");
    }
    if x == 0.0 {
        return format!("{sign}0x0p+0");
    }
    let (_, m, q) = decompose_f32(x);
    let top = 31 - m.leading_zeros() as i32;
    let frac = m & !(1 << top);
    let exp = q + top;
    if frac == 0 {
        return format!("{sign}0x1p{exp:+}");
    }
    let digits = (top as u32).div_ceil(4);
    let aligned = frac << (digits * 4 - top as u32);
    let hex = format!("{aligned:0width$x}", width = digits as usize);
    format!("{sign}0x1.{}p{exp:+}", hex.trim_end_matches('0'))
}
