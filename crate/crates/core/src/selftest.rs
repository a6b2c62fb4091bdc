//! Quick randomized cross-check of the fast paths against [`crate::reference`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formats::{hex_f32, FpFormat, FpValue};
use crate::instructions::{self, AccumMode};
use crate::{reference, rounding};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// First counterexample, if any.
    pub detail: String,
}

pub const FORMATS: [FpFormat; 5] = [
    FpFormat::BINARY16,
    FpFormat::BINARY16_FTZ,
    FpFormat::E6M9,
    FpFormat::E6M9_FTZ,
    FpFormat::BFLOAT16_FTZ,
];

/// Binary32 values concentrated around the range of `fmt`.
fn sample(rng: &mut impl Rng, fmt: FpFormat) -> f32 {
    let lo = fmt.e_min() - fmt.man_bits() as i32 - 3;
    let hi = fmt.e_max() + 2;
    let e = rng.random_range(lo.max(-149)..=hi.min(127));
    let m: u32 = rng.random_range(0..1 << 23);
    let v = f32::from_bits((((e + 127).max(0) as u32) << 23) | m);
    if rng.random() {
        -v
    } else {
        v
    }
}

fn representable(rng: &mut impl Rng, fmt: FpFormat) -> f32 {
    rounding::round_f32(sample(rng, fmt), fmt)
}

fn check(name: String, mut f: impl FnMut() -> Option<String>, n: usize) -> Check {
    for _ in 0..n {
        if let Some(detail) = f() {
            return Check {
                name,
                passed: false,
                detail,
            };
        }
    }
    Check {
        name,
        passed: true,
        detail: String::new(),
    }
}

fn same(a: f32, b: f32) -> bool {
    a.to_bits() == b.to_bits()
}

pub fn run(samples: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for fmt in FORMATS {
        out.push(check(
            format!("roundfp {fmt}"),
            || {
                let x = sample(&mut rng, fmt);
                let (got, want) = (rounding::round_f32(x, fmt), reference::round(x, fmt));
                (!same(got, want)).then(|| format!("x={} got {} want {}", hex_f32(x), hex_f32(got), hex_f32(want)))
            },
            samples,
        ));
        out.push(check(
            format!("encode/decode {fmt}"),
            || {
                let x = representable(&mut rng, fmt);
                let v = FpValue::new(x, fmt).ok()?;
                let back = FpValue::from_bits(v.to_bits(), fmt).value();
                (!same(back, x)).then(|| format!("x={} came back as {}", hex_f32(x), hex_f32(back)))
            },
            samples,
        ));
        for mode in [AccumMode::Macs, AccumMode::Fmacs, AccumMode::FMAC8] {
            out.push(check(
                format!("dot {mode} {fmt}"),
                || {
                    let n = rng.random_range(0..=40);
                    let w: Vec<f32> = (0..n).map(|_| representable(&mut rng, fmt)).collect();
                    let x: Vec<f32> = (0..n).map(|_| representable(&mut rng, fmt)).collect();
                    let got = instructions::dot(&w, &x, mode, fmt);
                    let want = reference::dot(&w, &x, mode, fmt);
                    (!same(got, want)).then(|| format!("n={n} got {} want {}", hex_f32(got), hex_f32(want)))
                },
                samples / 20,
            ));
        }
    }
    out
}
