//! Exact-arithmetic reference for rounding and the accumulate instructions.
//!
//! Everything here works on arbitrary-precision dyadic rationals and picks a
//! rounded result by comparing against the exact midpoint of the two
//! neighbouring grid values. It is slow and shares no arithmetic with the
//! fixed-width paths in [`crate::rounding`] and [`crate::instructions`],
//! which makes it usable as their oracle.

use std::cmp::Ordering;

use num_bigint::{BigInt, Sign};
use num_traits::{Signed, ToPrimitive, Zero};

use crate::formats::{canonical_nan, pow2, FpFormat};
use crate::instructions::AccumMode;

/// An extended exact value.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactValue {
    NaN,
    Inf { neg: bool },
    Zero { neg: bool },
    /// `num * 2^exp`, `num != 0`.
    Finite { num: BigInt, exp: i64 },
}

impl ExactValue {
    pub fn from_f32(x: f32) -> ExactValue {
        if x.is_nan() {
            return ExactValue::NaN;
        }
        if x.is_infinite() {
            return ExactValue::Inf {
                neg: x.is_sign_negative(),
            };
        }
        if x == 0.0 {
            return ExactValue::Zero {
                neg: x.is_sign_negative(),
            };
        }
        // f64 holds every f32 exactly and as a normal number.
        let bits = (x as f64).to_bits();
        let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        let tz = mant.trailing_zeros();
        let (mant, exp) = (mant >> tz, ((bits >> 52) & 0x7FF) as i64 - 1075 + tz as i64);
        let num = BigInt::from(mant);
        ExactValue::Finite {
            num: if x < 0.0 { -num } else { num },
            exp,
        }
    }

    pub fn add(&self, other: &ExactValue) -> ExactValue {
        use ExactValue::*;
        match (self, other) {
            (NaN, _) | (_, NaN) => NaN,
            (Inf { neg: a }, Inf { neg: b }) => {
                if a == b {
                    Inf { neg: *a }
                } else {
                    NaN
                }
            }
            (Inf { neg }, _) | (_, Inf { neg }) => Inf { neg: *neg },
            (Zero { neg: a }, Zero { neg: b }) => Zero { neg: *a && *b },
            (Zero { .. }, v) | (v, Zero { .. }) => v.clone(),
            (Finite { num: a, exp: ea }, Finite { num: b, exp: eb }) => {
                let e = (*ea).min(*eb);
                let sum = (a << (ea - e) as usize) + (b << (eb - e) as usize);
                if sum.is_zero() {
                    Zero { neg: false }
                } else {
                    Finite { num: sum, exp: e }
                }
            }
        }
    }

    pub fn mul(&self, other: &ExactValue) -> ExactValue {
        use ExactValue::*;
        let neg = self.is_negative() != other.is_negative();
        match (self, other) {
            (NaN, _) | (_, NaN) => NaN,
            (Inf { .. }, Zero { .. }) | (Zero { .. }, Inf { .. }) => NaN,
            (Inf { .. }, _) | (_, Inf { .. }) => Inf { neg },
            (Zero { .. }, _) | (_, Zero { .. }) => Zero { neg },
            (Finite { num: a, exp: ea }, Finite { num: b, exp: eb }) => Finite {
                num: a * b,
                exp: ea + eb,
            },
        }
    }

    fn is_negative(&self) -> bool {
        match self {
            ExactValue::NaN => false,
            ExactValue::Inf { neg } | ExactValue::Zero { neg } => *neg,
            ExactValue::Finite { num, .. } => num.sign() == Sign::Minus,
        }
    }

    /// Rounds to the nearest value of `format`, ties to even.
    pub fn round(&self, format: FpFormat) -> f32 {
        match self {
            ExactValue::NaN => canonical_nan(),
            ExactValue::Inf { neg } => signed(*neg, f32::INFINITY),
            ExactValue::Zero { neg } => signed(*neg, 0.0),
            ExactValue::Finite { num, exp } => round_finite(num, *exp, format),
        }
    }
}

fn signed(neg: bool, v: f32) -> f32 {
    if neg {
        -v
    } else {
        v
    }
}

/// Compares `a * 2^ea` with `b * 2^eb` for nonnegative `a`, `b`.
fn cmp_dyadic(a: &BigInt, ea: i64, b: &BigInt, eb: i64) -> Ordering {
    let e = ea.min(eb);
    let lhs = a << (ea - e) as usize;
    let rhs = b << (eb - e) as usize;
    lhs.cmp(&rhs)
}

fn round_finite(num: &BigInt, exp: i64, format: FpFormat) -> f32 {
    let neg = num.sign() == Sign::Minus;
    let mag = num.abs();
    let p = format.man_bits() as i64;
    let e_min = format.e_min() as i64;
    let e_max = format.e_max() as i64;

    // Binade of |x| and the grid spacing there.
    let binade = exp + mag.bits() as i64 - 1;
    let quantum = binade.max(e_min) - p;

    // Lower neighbour lo * 2^quantum, upper neighbour (lo + 1) * 2^quantum.
    let lo: BigInt = if exp >= quantum {
        &mag << (exp - quantum) as usize
    } else {
        &mag >> (quantum - exp) as usize
    };
    let on_grid = cmp_dyadic(&lo, quantum, &mag, exp) == Ordering::Equal;
    let chosen = if on_grid {
        lo
    } else {
        let hi = &lo + 1;
        let mid: BigInt = (&lo << 1usize) + 1;
        match cmp_dyadic(&mag, exp, &mid, quantum - 1) {
            Ordering::Less => lo,
            Ordering::Greater => hi,
            Ordering::Equal => {
                if (&lo % 2u32).is_zero() {
                    lo
                } else {
                    hi
                }
            }
        }
    };
    if chosen.is_zero() {
        return signed(neg, 0.0);
    }
    // Overflow past the largest finite value.
    let max_sig = (BigInt::from(1) << (p + 1) as usize) - 1;
    if cmp_dyadic(&chosen, quantum, &max_sig, e_max - p) == Ordering::Greater {
        return signed(neg, f32::INFINITY);
    }
    // Flush results below the smallest normal.
    if !format.denormals() && cmp_dyadic(&chosen, quantum, &BigInt::from(1), e_min) == Ordering::Less {
        return signed(neg, 0.0);
    }
    let sig = chosen.to_u64().expect("grid significand fits in 64 bits");
    signed(neg, (sig as f64 * pow2(quantum as i32)) as f32)
}

fn ev(x: f32) -> ExactValue {
    ExactValue::from_f32(x)
}

pub fn round(x: f32, format: FpFormat) -> f32 {
    ev(x).round(format)
}

pub fn add(a: f32, b: f32, format: FpFormat) -> f32 {
    ev(a).add(&ev(b)).round(format)
}

pub fn mac(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    let prod = ev(x).mul(&ev(y)).round(format);
    ev(a).add(&ev(prod)).round(format)
}

pub fn macs(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    let prod = ev(x).mul(&ev(y)).round(format);
    ev(a).add(&ev(prod)).round(FpFormat::BINARY32)
}

pub fn fmac(a: f32, x: f32, y: f32, format: FpFormat) -> f32 {
    ev(a).add(&ev(x).mul(&ev(y))).round(format)
}

pub fn fmacs(a: f32, x: f32, y: f32) -> f32 {
    fmac(a, x, y, FpFormat::BINARY32)
}

/// Step-by-step simulation of the chunked FMAC dot product: the 16-bit
/// accumulator takes exact fused updates, the master accumulator takes
/// binary32-rounded exact sums, and the result is rounded into `format`.
pub fn chunked_dot(w: &[f32], x: &[f32], format: FpFormat, chunk: usize) -> f32 {
    assert_eq!(w.len(), x.len());
    let mut master = 0.0f32;
    let mut acc = 0.0f32;
    for i in 0..w.len() {
        if i % chunk == 0 {
            master = add(master, acc, FpFormat::BINARY32);
            acc = 0.0;
        }
        acc = fmac(acc, w[i], x[i], format);
    }
    master = add(master, acc, FpFormat::BINARY32);
    round(master, format)
}

/// Dot product under any accumulate mode, rounded into `format`.
pub fn dot(w: &[f32], x: &[f32], mode: AccumMode, format: FpFormat) -> f32 {
    assert_eq!(w.len(), x.len());
    let pairs = w.iter().zip(x);
    match mode {
        AccumMode::Mac => pairs.fold(0.0, |a, (&wi, &xi)| mac(a, wi, xi, format)),
        AccumMode::Fmac => pairs.fold(0.0, |a, (&wi, &xi)| fmac(a, wi, xi, format)),
        AccumMode::Macs => round(pairs.fold(0.0, |a, (&wi, &xi)| macs(a, wi, xi, format)), format),
        AccumMode::Fmacs => round(pairs.fold(0.0, |a, (&wi, &xi)| fmacs(a, wi, xi)), format),
        AccumMode::Fmac8 { chunk } => chunked_dot(w, x, format, chunk),
    }
}
