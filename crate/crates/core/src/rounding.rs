//! Round-to-nearest-even quantization into an [`FpFormat`].

use std::fmt;

use bitflags::bitflags;

use crate::formats::{canonical_nan, decompose_f32, pow2, FpFormat, FpValue};
use crate::telemetry::{DenormalStats, Phase, TelemetryError, TelemetrySink};
use crate::tensor::QuantTensor;

bitflags! {
    /// What happened while rounding one value.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct RoundFlags: u8 {
        /// Output equals input bit-for-bit.
        const EXACT = 1;
        /// The nearest-even step changed the value.
        const ROUNDED = 1 << 1;
        /// A nonzero input rounded to zero on the denormal grid.
        const UNDERFLOWED_TO_ZERO = 1 << 2;
        /// A finite input rounded past the largest finite value.
        const OVERFLOWED_TO_INF = 1 << 3;
        /// A would-be denormal result was replaced by a signed zero.
        const FLUSHED_DENORMAL = 1 << 4;
    }
}

impl fmt::Display for RoundFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(RoundFlags, &str); 5] = [
            (RoundFlags::EXACT, "Exact"),
            (RoundFlags::ROUNDED, "Rounded"),
            (RoundFlags::UNDERFLOWED_TO_ZERO, "Underflowed_to_zero"),
            (RoundFlags::OVERFLOWED_TO_INF, "Overflowed_to_inf"),
            (RoundFlags::FLUSHED_DENORMAL, "Flushed_denormal"),
        ];
        let names: Vec<&str> = NAMES
            .iter()
            .filter(|(flag, _)| self.contains(*flag))
            .map(|(_, name)| *name)
            .collect();
        if names.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundingOutcome {
    pub value: FpValue,
    pub flags: RoundFlags,
}

/// Rounds a binary32 value to the nearest value of `format`, ties to even.
///
/// Magnitudes at or beyond `(2 - 2^(-p-1)) * 2^E_max` become infinities. In
/// flush-to-zero formats the value is first rounded on the denormal grid and
/// then replaced by a zero of the same sign if the result is denormal.
pub fn roundfp(x: f32, format: FpFormat) -> RoundingOutcome {
    let (value, mut flags) = if x.is_nan() {
        (canonical_nan(), RoundFlags::empty())
    } else if x.is_infinite() || x == 0.0 {
        (x, RoundFlags::empty())
    } else {
        let (neg, m, q) = decompose_f32(x);
        round_dyadic(neg, m as u128, q, format)
    };
    if value.to_bits() == x.to_bits() {
        flags |= RoundFlags::EXACT;
    }
    RoundingOutcome {
        value: FpValue::new(value, format).expect("rounded value is representable"),
        flags,
    }
}

/// [`roundfp`] without the bookkeeping.
pub fn round_f32(x: f32, format: FpFormat) -> f32 {
    if x.is_nan() {
        canonical_nan()
    } else if x.is_infinite() || x == 0.0 {
        x
    } else {
        let (neg, m, q) = decompose_f32(x);
        round_dyadic(neg, m as u128, q, format).0
    }
}

/// Rounds the exact value `(-1)^neg * m * 2^q` (with `m != 0`) into `format`.
///
/// The returned flags never contain `EXACT`; an empty set means the value
/// was already on the format's grid.
pub(crate) fn round_dyadic(neg: bool, m: u128, q: i32, format: FpFormat) -> (f32, RoundFlags) {
    debug_assert!(m != 0);
    let signed = |mag: f32| if neg { -mag } else { mag };
    let p = format.man_bits() as i32;
    let top = q + 127 - m.leading_zeros() as i32;
    let quantum = top.max(format.e_min()) - p;

    let (r, exp, inexact) = if quantum <= q {
        // On the grid already: at most p + 1 significant bits.
        if top > format.e_max() {
            return (
                signed(f32::INFINITY),
                RoundFlags::ROUNDED | RoundFlags::OVERFLOWED_TO_INF,
            );
        }
        (m as u64, q, false)
    } else {
        let shift = (quantum - q) as u32;
        let (r, up, inexact) = if shift >= 128 {
            (0u128, shift == 128 && m > 1u128 << 127, true)
        } else {
            let r = m >> shift;
            let rem = m & ((1u128 << shift) - 1);
            let half = 1u128 << (shift - 1);
            (r, rem > half || (rem == half && r & 1 == 1), rem != 0)
        };
        ((r + up as u128) as u64, quantum, inexact)
    };

    let mut flags = if inexact {
        RoundFlags::ROUNDED
    } else {
        RoundFlags::empty()
    };
    if r == 0 {
        return (signed(0.0), flags | RoundFlags::UNDERFLOWED_TO_ZERO);
    }
    let result_top = exp + 63 - r.leading_zeros() as i32;
    if result_top > format.e_max() {
        return (signed(f32::INFINITY), flags | RoundFlags::OVERFLOWED_TO_INF);
    }
    if result_top < format.e_min() && !format.denormals() {
        flags |= RoundFlags::FLUSHED_DENORMAL;
        return (signed(0.0), flags);
    }
    (signed((r as f64 * pow2(exp)) as f32), flags)
}

/// Elementwise [`roundfp`].
pub fn roundfp_tensor(x: &[f32], shape: &[usize], format: FpFormat) -> QuantTensor {
    let data = x.iter().map(|&v| round_f32(v, format)).collect();
    QuantTensor::from_rounded(shape.to_vec(), data, format)
}

/// [`roundfp_tensor`] that also reports the class counts of the result to
/// `sink` under `(tensor_id, phase, step)`.
pub fn roundfp_tensor_observed(
    x: &[f32],
    shape: &[usize],
    format: FpFormat,
    sink: &dyn TelemetrySink,
    tensor_id: &str,
    phase: Phase,
    step: u64,
) -> Result<QuantTensor, TelemetryError> {
    let t = roundfp_tensor(x, shape, format);
    sink.record(DenormalStats::from_values(tensor_id, phase, step, t.data(), format))?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::Recorder;

    fn p2(k: i32) -> f32 {
        pow2(k) as f32
    }

    #[test]
    fn zero_is_exact() {
        for f in [FpFormat::BINARY16, FpFormat::E6M9_FTZ, FpFormat::BFLOAT16_FTZ] {
            let out = roundfp(0.0, f);
            assert_eq!(out.value.value().to_bits(), 0);
            assert_eq!(out.flags, RoundFlags::EXACT);
            let out = roundfp(-0.0, f);
            assert_eq!(out.value.value().to_bits(), 0x8000_0000);
        }
    }

    #[test]
    fn half_min_denormal_ties_to_zero() {
        let out = roundfp(p2(-25), FpFormat::BINARY16);
        assert_eq!(out.value.value(), 0.0);
        assert_eq!(out.flags, RoundFlags::ROUNDED | RoundFlags::UNDERFLOWED_TO_ZERO);
        // just above the midpoint rounds up to the min denormal
        let above = f32::from_bits(p2(-25).to_bits() + 1);
        assert_eq!(round_f32(above, FpFormat::BINARY16), p2(-24));
        // 3 * 2^-25 is a tie between 2^-24 (odd) and 2^-23 (even)
        assert_eq!(round_f32(3.0 * p2(-25), FpFormat::BINARY16), p2(-23));
    }

    #[test]
    fn flush_in_ftz_formats() {
        let out = roundfp(p2(-15), FpFormat::BINARY16_FTZ);
        assert_eq!(out.value.value(), 0.0);
        assert_eq!(out.flags, RoundFlags::FLUSHED_DENORMAL);
        let out = roundfp(-p2(-35), FpFormat::E6M9_FTZ);
        assert_eq!(out.value.value().to_bits(), 0x8000_0000);
        assert_eq!(out.flags, RoundFlags::FLUSHED_DENORMAL);
        // rounds up into the normal range: no flush
        let x = p2(-14) - p2(-26);
        let out = roundfp(x, FpFormat::BINARY16_FTZ);
        assert_eq!(out.value.value(), p2(-14));
        assert_eq!(out.flags, RoundFlags::ROUNDED);
    }

    #[test]
    fn tie_to_even_at_one() {
        let out = roundfp(1.0 + p2(-10), FpFormat::E6M9);
        assert_eq!(out.value.value(), 1.0);
        assert_eq!(out.flags, RoundFlags::ROUNDED);
        assert_eq!(round_f32(1.0 + 3.0 * p2(-10), FpFormat::E6M9), 1.0 + p2(-8));
    }

    #[test]
    fn overflow_threshold() {
        let h = FpFormat::BINARY16;
        // (2 - 2^-11) * 2^15 = 65520 is the tie; it goes to infinity
        assert_eq!(round_f32(65519.0, h), 65504.0);
        let out = roundfp(65520.0, h);
        assert_eq!(out.value.value(), f32::INFINITY);
        assert_eq!(out.flags, RoundFlags::ROUNDED | RoundFlags::OVERFLOWED_TO_INF);
        assert_eq!(round_f32(-1.0e9, h), f32::NEG_INFINITY);
        assert_eq!(round_f32(f32::MAX, FpFormat::BFLOAT16_FTZ), f32::INFINITY);
        assert_eq!(round_f32(f32::INFINITY, h), f32::INFINITY);
    }

    #[test]
    fn nan_is_canonical() {
        let out = roundfp(f32::from_bits(0xFFC0_1234), FpFormat::BINARY16);
        assert_eq!(out.value.value().to_bits(), crate::formats::CANONICAL_NAN_BITS);
        assert!(!out.flags.contains(RoundFlags::EXACT));
    }

    #[test]
    fn binary32_is_identity() {
        for bits in [1u32, 0x0080_0000, 0x3F80_0001, 0x7F7F_FFFF, 0x8000_0001, 0x1234_5678] {
            let x = f32::from_bits(bits);
            let out = roundfp(x, FpFormat::BINARY32);
            assert_eq!(out.value.value().to_bits(), bits);
            assert_eq!(out.flags, RoundFlags::EXACT);
        }
    }

    #[test]
    fn flags_display() {
        assert_eq!(
            (RoundFlags::ROUNDED | RoundFlags::UNDERFLOWED_TO_ZERO).to_string(),
            "Rounded,Underflowed_to_zero"
        );
        assert_eq!(RoundFlags::empty().to_string(), "-");
    }

    #[test]
    fn tensor_examples() {
        let h = FpFormat::BINARY16;
        let t = roundfp_tensor(&[0.0, 0.0], &[2], h);
        assert_eq!(t.data(), &[0.0, 0.0]);

        let sink = Recorder::default();
        let t = roundfp_tensor_observed(&[p2(-24), 1.0], &[2], h, &sink, "x", Phase::ForwardActivation, 0).unwrap();
        assert_eq!(t.data(), &[p2(-24), 1.0]);
        let t2 = roundfp_tensor_observed(&[p2(-25), p2(-25)], &[2], h, &sink, "y", Phase::ForwardActivation, 0).unwrap();
        assert_eq!(t2.data(), &[0.0, 0.0]);
        let log = sink.records();
        assert_eq!(log[0].fraction_denormal(), 0.5);
        assert_eq!(log[1].fraction_denormal(), 0.0);
    }
}
