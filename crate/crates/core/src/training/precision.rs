use crate::formats::FpFormat;
use crate::instructions::{self, AccumMode};
use crate::rounding::round_f32;

/// Arithmetic used by the layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Plain binary32 with `f32::mul_add` reductions; nothing is rounded.
    Reference,
    /// Every layer boundary is rounded into `format`; reductions follow `mode`.
    Quantized { format: FpFormat, mode: AccumMode },
}

impl Precision {
    pub fn format(&self) -> Option<FpFormat> {
        match self {
            Precision::Reference => None,
            Precision::Quantized { format, .. } => Some(*format),
        }
    }

    pub fn round(&self, x: f32) -> f32 {
        match self {
            Precision::Reference => x,
            Precision::Quantized { format, .. } => round_f32(x, *format),
        }
    }

    pub fn round_all(&self, xs: &[f32]) -> Vec<f32> {
        xs.iter().map(|&x| self.round(x)).collect()
    }

    /// Dot product rounded into the working format.
    pub fn dot(&self, a: &[f32], b: &[f32]) -> f32 {
        match self {
            Precision::Reference => reference_dot(a, b),
            Precision::Quantized { format, mode } => instructions::dot(a, b, *mode, *format),
        }
    }

    /// `a (m x k)` times `bt^T` (`bt` is `n x k`). `wide` keeps the
    /// accumulator width instead of rounding into the working format.
    pub fn matmul_nt(&self, a: &[f32], bt: &[f32], m: usize, k: usize, n: usize, wide: bool) -> Vec<f32> {
        match self {
            Precision::Reference => {
                assert_eq!(a.len(), m * k);
                assert_eq!(bt.len(), n * k);
                let mut out = Vec::with_capacity(m * n);
                for i in 0..m {
                    for j in 0..n {
                        out.push(reference_dot(&a[i * k..(i + 1) * k], &bt[j * k..(j + 1) * k]));
                    }
                }
                out
            }
            Precision::Quantized { format, mode } => {
                instructions::matmul_nt(a, bt, m, k, n, *mode, *format, wide)
            }
        }
    }
}

fn reference_dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0f32, |acc, (&x, &y)| x.mul_add(y, acc))
}
