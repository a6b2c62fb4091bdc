//! Mixed-precision multiply-accumulate instructions and the reductions built
//! from them.
//!
//! Operands are `f32` surrogates. "16-bit" operands must be representable in
//! the format passed alongside them; wide accumulators are plain binary32.
//!
//! | instruction | accumulator | roundings                     |
//! |-------------|-------------|-------------------------------|
//! | `mac`       | format      | product, then sum             |
//! | `macs`      | binary32    | product to format, sum to b32 |
//! | `fmac`      | format      | one, on the exact `a + x*y`   |
//! | `fmacs`     | binary32    | one, on the exact `a + x*y`   |
//!
//! Fused results are computed with exact integer significand alignment in a
//! 128-bit window and rounded once; there is no intermediate width.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{canonical_nan, decompose_f32, FpFormat};
use crate::rounding::{round_dyadic, round_f32};
use crate::tensor::{QuantTensor, TensorError};

/// Drain interval of the chunked FMAC dot product.
pub const DEFAULT_CHUNK: usize = 8;

/// How a dot product accumulates its products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccumMode {
    Mac,
    Macs,
    Fmac,
    Fmacs,
    /// `chunk` fused 16-bit accumulations drained into a binary32 master
    /// accumulator.
    Fmac8 { chunk: usize },
}

impl AccumMode {
    pub const FMAC8: AccumMode = AccumMode::Fmac8 {
        chunk: DEFAULT_CHUNK,
    };
}

impl fmt::Display for AccumMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccumMode::Mac => f.write_str("mac"),
            AccumMode::Macs => f.write_str("macs"),
            AccumMode::Fmac => f.write_str("fmac"),
            AccumMode::Fmacs => f.write_str("fmacs"),
            AccumMode::Fmac8 { chunk } if *chunk == DEFAULT_CHUNK => f.write_str("fmac8"),
            AccumMode::Fmac8 { chunk } => write!(f, "fmac8:{chunk}"),
        }
    }
}

impl FromStr for AccumMode {
    type Err = String;

    /// Accepts `mac`, `macs`, `fmac`, `fmacs`, `fmac8`, and `fmac8:<chunk>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "mac" => Ok(AccumMode::Mac),
            "macs" => Ok(AccumMode::Macs),
            "fmac" => Ok(AccumMode::Fmac),
            "fmacs" => Ok(AccumMode::Fmacs),
            "fmac8" => Ok(AccumMode::FMAC8),
            _ => match s.strip_prefix("fmac8:").map(str::parse::<usize>) {
                Some(Ok(chunk)) if chunk >= 1 => Ok(AccumMode::Fmac8 { chunk }),
                _ => Err(format!(
                    "unknown accumulate mode {s:?} (expected mac|macs|fmac|fmacs|fmac8[:chunk])"
                )),
            },
        }
    }
}

impl Serialize for AccumMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AccumMode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An exact finite value `(-1)^neg * m * 2^q`; `m == 0` is a signed zero.
#[derive(Debug, Clone, Copy)]
struct Exact {
    neg: bool,
    m: u64,
    q: i32,
}

impl Exact {
    fn of(x: f32) -> Exact {
        debug_assert!(x.is_finite());
        if x == 0.0 {
            Exact {
                neg: x.is_sign_negative(),
                m: 0,
                q: 0,
            }
        } else {
            let (neg, m, q) = decompose_f32(x);
            Exact { neg, m: m as u64, q }
        }
    }

    fn product(x: f32, y: f32) -> Exact {
        let (a, b) = (Exact::of(x), Exact::of(y));
        Exact {
            neg: a.neg != b.neg,
            m: a.m * b.m,
            q: a.q + b.q,
        }
    }

    fn top(self) -> i32 {
        self.q + 63 - self.m.leading_zeros() as i32
    }

    fn round(self, format: FpFormat) -> f32 {
        if self.m == 0 {
            return if self.neg { -0.0 } else { 0.0 };
        }
        round_dyadic(self.neg, self.m as u128, self.q, format).0
    }
}

/// Places `x` on the grid `2^base`, folding bits below it into a sticky bit.
fn align(x: Exact, base: i32) -> (u128, bool) {
    if x.q >= base {
        ((x.m as u128) << (x.q - base), false)
    } else {
        let k = (base - x.q) as u32;
        if k >= 64 {
            (0, x.m != 0)
        } else {
            ((x.m >> k) as u128, x.m & ((1u64 << k) - 1) != 0)
        }
    }
}

/// Rounds the exact sum `a + b` once into `format`.
///
/// Both operands are aligned 120 bits below the larger leading bit. An
/// operand falling below that window can only be far smaller than the other,
/// so it is kept as truncation plus a sticky half-unit one bit lower; the
/// resulting value sits strictly inside the same open interval between
/// rounding boundaries as the exact sum.
fn sum_round(a: Exact, b: Exact, format: FpFormat) -> f32 {
    if a.m == 0 && b.m == 0 {
        return if a.neg && b.neg { -0.0 } else { 0.0 };
    }
    if a.m == 0 {
        return b.round(format);
    }
    if b.m == 0 {
        return a.round(format);
    }
    let base = a.top().max(b.top()) - 120;
    let (ma, sa) = align(a, base);
    let (mb, sb) = align(b, base);
    let ma = (ma << 1) | sa as u128;
    let mb = (mb << 1) | sb as u128;
    let (neg, mag) = if a.neg == b.neg {
        (a.neg, ma + mb)
    } else if ma >= mb {
        (a.neg, ma - mb)
    } else {
        (b.neg, mb - ma)
    };
    if mag == 0 {
        return 0.0;
    }
    round_dyadic(neg, mag, base - 1, format).0
}

/// Special-value handling shared by the fused instructions. Returns `None`
/// when `a`, `x` and `y` are all finite.
fn fused_special(a: f32, x: f32, y: f32) -> Option<f32> {
    if a.is_nan() || x.is_nan() || y.is_nan() {
        return Some(canonical_nan());
    }
    let prod_inf = x.is_infinite() || y.is_infinite();
    if prod_inf {
        if x == 0.0 || y == 0.0 {
            return Some(canonical_nan());
        }
        let neg = x.is_sign_negative() != y.is_sign_negative();
        if a.is_infinite() && a.is_sign_negative() != neg {
            return Some(canonical_nan());
        }
        return Some(if neg { f32::NEG_INFINITY } else { f32::INFINITY });
    }
    if a.is_infinite() {
        return Some(a);
    }
    None
}

fn fused(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    if let Some(s) = fused_special(a, x, y) {
        return s;
    }
    sum_round(Exact::of(a), Exact::product(x, y), format)
}

/// `round(a + b)` into `format` from the exact sum.
pub fn add(a: f32, b: f32, format: FpFormat) -> f32 {
    if let Some(s) = fused_special(a, b, 1.0) {
        return s;
    }
    sum_round(Exact::of(a), Exact::of(b), format)
}

/// The product `x * y` rounded once into `format`.
pub fn mul(x: f32, y: f32, format: FpFormat) -> f32 {
    if let Some(s) = fused_special(0.0, x, y) {
        return s;
    }
    Exact::product(x, y).round(format)
}

/// `a16 = round(a16 + round(x16 * y16))`.
pub fn mac(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    add(a, mul(x, y, format), format)
}

/// `a32 = round32(a32 + round(x16 * y16))`.
pub fn macs(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    add(a, mul(x, y, format), FpFormat::BINARY32)
}

/// `a16 = round(a16 + x16 * y16)` with a single rounding.
pub fn fmac(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    fused(a, x, y, format)
}

/// `a32 = round32(a32 + x16 * y16)` with a single rounding.
pub fn fmacs(a: f32, x: f32, y: f32) -> f32 {
    fused(a, x, y, FpFormat::BINARY32)
}

/// FMAC-8 dot product: 16-bit fused accumulation drained into a binary32
/// master accumulator before every index that is a multiple of 8 and once at
/// the end. The result is rounded into `format`.
pub fn fmac8_dot(w: &[f32], x: &[f32], format: FpFormat) -> f32 {
    round_f32(chunked_master(w, x, format, DEFAULT_CHUNK), format)
}

/// The binary32 master accumulator of the chunked FMAC dot product, before
/// the final rounding.
pub fn chunked_master(w: &[f32], x: &[f32], format: FpFormat, chunk: usize) -> f32 {
    assert_eq!(w.len(), x.len(), "dot product operands differ in length");
    assert!(chunk >= 1);
    let mut master = 0.0f32;
    let mut acc = 0.0f32;
    for (i, (&wi, &xi)) in w.iter().zip(x).enumerate() {
        if i % chunk == 0 {
            master = add(master, acc, FpFormat::BINARY32);
            acc = 0.0;
        }
        acc = fmac(acc, wi, xi, format);
    }
    add(master, acc, FpFormat::BINARY32)
}

/// Dot product under `mode`, before any final rounding into `format`. For
/// the 16-bit accumulator modes this is already a value of `format`; for the
/// others it is the binary32 accumulator.
pub fn dot_wide(w: &[f32], x: &[f32], mode: AccumMode, format: FpFormat) -> f32 {
    assert_eq!(w.len(), x.len(), "dot product operands differ in length");
    let pairs = w.iter().zip(x);
    match mode {
        AccumMode::Mac => pairs.fold(0.0, |a, (&wi, &xi)| mac(a, wi, xi, format)),
        AccumMode::Macs => pairs.fold(0.0, |a, (&wi, &xi)| macs(a, wi, xi, format)),
        AccumMode::Fmac => pairs.fold(0.0, |a, (&wi, &xi)| fmac(a, wi, xi, format)),
        AccumMode::Fmacs => pairs.fold(0.0, |a, (&wi, &xi)| fmacs(a, wi, xi)),
        AccumMode::Fmac8 { chunk } => chunked_master(w, x, format, chunk),
    }
}

/// Dot product under `mode`, rounded into `format`.
pub fn dot(w: &[f32], x: &[f32], mode: AccumMode, format: FpFormat) -> f32 {
    round_f32(dot_wide(w, x, mode, format), format)
}

/// Row-major `a (m x k)` times `bt^T`, where `bt` is `b` transposed and
/// stored as `n x k`. Each output is one sequential ascending-index
/// reduction; outputs are computed in parallel. With `wide` set the final
/// rounding into `format` is skipped.
pub fn matmul_nt(
    a: &[f32],
    bt: &[f32],
    m: usize,
    k: usize,
    n: usize,
    mode: AccumMode,
    format: FpFormat,
    wide: bool,
) -> Vec<f32> {
    assert_eq!(a.len(), m * k);
    assert_eq!(bt.len(), n * k);
    let mut out = vec![0.0f32; m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let bj = &bt[j * k..(j + 1) * k];
            *o = if wide {
                dot_wide(ai, bj, mode, format)
            } else {
                dot(ai, bj, mode, format)
            };
        }
    });
    out
}

/// Transposes a row-major `rows x cols` matrix.
pub fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    assert_eq!(x.len(), rows * cols);
    let mut t = vec![0.0f32; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

/// Matrix product of two 2-D tensors with every output reduced under `mode`
/// and rounded into `format`.
pub fn matmul(
    a: &QuantTensor,
    b: &QuantTensor,
    mode: AccumMode,
    format: FpFormat,
) -> Result<QuantTensor, TensorError> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => return Err(TensorError::NotMatrix(s.to_vec())),
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        s => return Err(TensorError::NotMatrix(s.to_vec())),
    };
    if k != k2 {
        return Err(TensorError::InnerMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let bt = transpose(b.data(), k, n);
    let out = matmul_nt(a.data(), &bt, m, k, n, mode, format, false);
    Ok(QuantTensor::from_rounded(vec![m, n], out, format))
}
