//! Test-side oracles, written independently of the library.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rangefp::FpFormat;

pub const FORMATS: [FpFormat; 5] = [
    FpFormat::BINARY16,
    FpFormat::BINARY16_FTZ,
    FpFormat::E6M9,
    FpFormat::E6M9_FTZ,
    FpFormat::BFLOAT16_FTZ,
];

pub fn same(a: f32, b: f32) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

/// Every nonnegative value of the format's denormal-including grid, in
/// increasing order, plus one virtual point `2^(E_max + 1)` standing for
/// overflow. The flag says whether the integer significand is even.
pub struct Grid {
    fmt: FpFormat,
    points: Vec<(f64, bool)>,
}

impl Grid {
    pub fn new(fmt: FpFormat) -> Self {
        let p = fmt.man_bits() as i32;
        let (e_min, e_max) = (fmt.e_min(), fmt.e_max());
        let two = |k: i32| 2f64.powi(k);
        let mut points = vec![(0.0, true)];
        for m in 1..(1u64 << p) {
            points.push((m as f64 * two(e_min - p), m % 2 == 0));
        }
        for e in e_min..=e_max {
            for m in (1u64 << p)..(1u64 << (p + 1)) {
                points.push((m as f64 * two(e - p), m % 2 == 0));
            }
        }
        points.push((two(e_max + 1), true));
        Grid { fmt, points }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points[..self.points.len() - 1].iter().map(|p| p.0)
    }

    /// Brute-force nearest-even rounding of a binary32 value.
    pub fn round(&self, x: f32) -> f32 {
        if x.is_nan() {
            return f32::NAN;
        }
        if x.is_infinite() {
            return x;
        }
        let a = (x as f64).abs();
        let i = self.points.partition_point(|p| p.0 <= a);
        let top = self.points.len() - 1;
        let r = if i > top {
            // beyond the virtual point
            f64::INFINITY
        } else {
            let (lo, lo_even) = self.points[i - 1];
            let (hi, _) = self.points[i];
            if lo == a {
                lo
            } else {
                let mid = (lo + hi) / 2.0;
                if a < mid || (a == mid && lo_even) {
                    lo
                } else {
                    hi
                }
            }
        };
        let r = if r >= self.points[top].0 {
            f64::INFINITY
        } else if !self.fmt.denormals() && r < 2f64.powi(self.fmt.e_min()) {
            0.0
        } else {
            r
        };
        let r = r as f32;
        if x.is_sign_negative() {
            -r
        } else {
            r
        }
    }
}

/// Every value in the oracle below is an integer multiple of `2^UNIT`.
const UNIT: i64 = -320;

#[derive(Debug, Clone, PartialEq)]
pub enum X {
    NaN,
    Inf(bool),
    Zero(bool),
    Fin(BigInt),
}

impl X {
    pub fn of(v: f32) -> X {
        if v.is_nan() {
            return X::NaN;
        }
        if v.is_infinite() {
            return X::Inf(v < 0.0);
        }
        if v == 0.0 {
            return X::Zero(v.is_sign_negative());
        }
        let bits = v.to_bits();
        let biased = ((bits >> 23) & 0xFF) as i64;
        let frac = (bits & 0x7F_FFFF) as u64;
        let (m, q) = if biased == 0 { (frac, -149) } else { (frac | 1 << 23, biased - 150) };
        let n = BigInt::from(m) << (q - UNIT) as usize;
        X::Fin(if v < 0.0 { -n } else { n })
    }

    fn neg(&self) -> bool {
        match self {
            X::NaN => false,
            X::Inf(s) | X::Zero(s) => *s,
            X::Fin(n) => n.is_negative(),
        }
    }

    pub fn add(&self, o: &X) -> X {
        match (self, o) {
            (X::NaN, _) | (_, X::NaN) => X::NaN,
            (X::Inf(a), X::Inf(b)) => {
                if a == b {
                    X::Inf(*a)
                } else {
                    X::NaN
                }
            }
            (X::Inf(s), _) | (_, X::Inf(s)) => X::Inf(*s),
            (X::Zero(a), X::Zero(b)) => X::Zero(*a && *b),
            (X::Zero(_), v) | (v, X::Zero(_)) => v.clone(),
            (X::Fin(a), X::Fin(b)) => {
                let s = a + b;
                if s.is_zero() {
                    X::Zero(false)
                } else {
                    X::Fin(s)
                }
            }
        }
    }

    pub fn mul(&self, o: &X) -> X {
        let neg = self.neg() != o.neg();
        match (self, o) {
            (X::NaN, _) | (_, X::NaN) => X::NaN,
            (X::Inf(_), X::Zero(_)) | (X::Zero(_), X::Inf(_)) => X::NaN,
            (X::Inf(_), _) | (_, X::Inf(_)) => X::Inf(neg),
            (X::Zero(_), _) | (_, X::Zero(_)) => X::Zero(neg),
            // the product of two multiples of 2^UNIT is rescaled back
            (X::Fin(a), X::Fin(b)) => X::Fin((a * b) >> (-UNIT) as usize),
        }
    }

    /// Round to nearest, ties to even significand, into `(e, p, denormals)`.
    pub fn round(&self, e: u32, p: u32, denormals: bool) -> X {
        let n = match self {
            X::Fin(n) => n,
            other => return other.clone(),
        };
        let neg = n.is_negative();
        let mag = n.abs();
        let e_min = 2 - (1i64 << (e - 1));
        let e_max = (1i64 << (e - 1)) - 1;
        let p = p as i64;
        let k = mag.bits() as i64 - 1 + UNIT;
        let quantum = k.max(e_min) - p;
        let s = quantum - UNIT;
        let r = if s <= 0 {
            mag
        } else {
            let s = s as usize;
            let q = &mag >> s;
            let rem = &mag - (&q << s);
            let half = BigInt::one() << (s - 1);
            let up = rem > half || (rem == half && (&q % 2u32) == BigInt::one());
            (if up { q + 1u32 } else { q }) << s
        };
        let limit = BigInt::one() << (e_max + 1 - UNIT) as usize;
        let min_normal = BigInt::one() << (e_min - UNIT) as usize;
        if r >= limit {
            X::Inf(neg)
        } else if r.is_zero() || (!denormals && r < min_normal) {
            X::Zero(neg)
        } else {
            X::Fin(if neg { -r } else { r })
        }
    }

    pub fn round_fmt(&self, fmt: FpFormat) -> X {
        self.round(fmt.exp_bits(), fmt.man_bits(), fmt.denormals())
    }

    pub fn round32(&self) -> X {
        self.round(8, 23, true)
    }

    /// Exact for anything that came out of `round`.
    pub fn to_f32(&self) -> f32 {
        match self {
            X::NaN => f32::NAN,
            X::Inf(s) => {
                if *s {
                    f32::NEG_INFINITY
                } else {
                    f32::INFINITY
                }
            }
            X::Zero(s) => {
                if *s {
                    -0.0
                } else {
                    0.0
                }
            }
            X::Fin(n) => {
                let tz = n.trailing_zeros().unwrap() as i64;
                let m = (n >> tz as usize).to_i64().expect("significand wider than 63 bits");
                assert!(m.unsigned_abs() < 1 << 53);
                let v = m as f64 * 2f64.powi((tz + UNIT) as i32);
                assert_eq!(v as f32 as f64, v, "not a binary32 value");
                v as f32
            }
        }
    }
}

/// FMAC: fused multiply-add rounded once into the format.
pub fn fmac(a: f32, x: f32, y: f32, fmt: FpFormat) -> f32 {
    X::of(a).add(&X::of(x).mul(&X::of(y))).round_fmt(fmt).to_f32()
}

/// FMACS: fused multiply-add rounded once into binary32.
pub fn fmacs(a: f32, x: f32, y: f32) -> f32 {
    X::of(a).add(&X::of(x).mul(&X::of(y))).round32().to_f32()
}

/// MACS: product rounded into the format, sum rounded into binary32.
pub fn macs(a: f32, x: f32, y: f32, fmt: FpFormat) -> f32 {
    let prod = X::of(x).mul(&X::of(y)).round_fmt(fmt);
    X::of(a).add(&prod).round32().to_f32()
}

/// MAC: product and sum each rounded into the format.
pub fn mac(a: f32, x: f32, y: f32, fmt: FpFormat) -> f32 {
    let prod = X::of(x).mul(&X::of(y)).round_fmt(fmt);
    X::of(a).add(&prod).round_fmt(fmt).to_f32()
}

/// Chunked FMAC dot product, step by step: a format-width accumulator is
/// drained into a binary32 master every `chunk` products, and the master is
/// rounded into the format at the end.
pub fn fmac8_dot(w: &[f32], x: &[f32], fmt: FpFormat, chunk: usize) -> f32 {
    let mut master = X::Zero(false);
    let mut acc = X::Zero(false);
    for i in 0..w.len() {
        if i % chunk == 0 {
            master = master.add(&acc).round32();
            acc = X::Zero(false);
        }
        acc = acc.add(&X::of(w[i]).mul(&X::of(x[i]))).round_fmt(fmt);
    }
    master = master.add(&acc).round32();
    master.round_fmt(fmt).to_f32()
}

/// A random representable value of `fmt` with exponent drawn from `lo..=hi`.
pub fn value_in(rng: &mut impl Rng, fmt: FpFormat, lo: i32, hi: i32) -> f32 {
    let p = fmt.man_bits();
    let e = rng.random_range(lo..=hi);
    let m: u32 = rng.random_range(0..1 << p);
    let v = if e < fmt.e_min() {
        if fmt.denormals() {
            // denormal: significand below 2^p at E_min
            (m as f64 * 2f64.powi(fmt.e_min() - p as i32)) as f32
        } else {
            0.0
        }
    } else {
        (((1u64 << p) + m as u64) as f64 * 2f64.powi(e - p as i32)) as f32
    };
    if rng.random() {
        -v
    } else {
        v
    }
}

/// A representable value anywhere in the format's finite range.
pub fn any_value(rng: &mut impl Rng, fmt: FpFormat) -> f32 {
    value_in(rng, fmt, fmt.e_min() - 1, fmt.e_max())
}

/// A binary32 input aimed at the format's range: random bits with the
/// exponent drawn from slightly beyond both ends of the format's range.
pub fn input_near(rng: &mut impl Rng, fmt: FpFormat) -> f32 {
    let lo = (fmt.e_min() - fmt.man_bits() as i32 - 3).max(-150);
    let hi = (fmt.e_max() + 2).min(127);
    let e = rng.random_range(lo..=hi);
    let m: u32 = rng.random_range(0..1 << 23);
    let biased = (e + 127).max(0) as u32;
    let v = f32::from_bits((biased << 23) | m);
    if rng.random() {
        -v
    } else {
        v
    }
}

/// Midpoints between consecutive grid values and their binary32 neighbours,
/// plus the grid values and their neighbours.
pub fn structured_inputs(grid: &Grid) -> Vec<f32> {
    let vals: Vec<f64> = grid.values().collect();
    let mut out = Vec::with_capacity(vals.len() * 8);
    let mut push = |v: f64| {
        let f = v as f32;
        if f as f64 == v && f.is_finite() {
            let b = f.to_bits();
            for c in [f, f32::from_bits(b.wrapping_sub(1)), f32::from_bits(b + 1)] {
                if c.is_finite() && c >= 0.0 {
                    out.push(c);
                    out.push(-c);
                }
            }
        }
    };
    for w in vals.windows(2) {
        push(w[0]);
        push((w[0] + w[1]) / 2.0);
    }
    let last = *vals.last().unwrap();
    push(last);
    // the overflow midpoint and beyond
    let top = 2f64 * 2f64.powi(grid.fmt.e_max());
    push((last + top) / 2.0);
    push(top);
    out
}
