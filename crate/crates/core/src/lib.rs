//! Bit-exact emulation of parametric 16-bit floating-point formats.
//!
//! - [`formats`]: `1/e/p/{d,n}` descriptors, classification, 16-bit encoding.
//! - [`rounding`]: round-to-nearest-even quantization (`roundfp`).
//! - [`instructions`]: MAC/MACS/FMAC/FMACS, the chunked FMAC-8 dot product
//!   and matrix products built from them.
//! - [`reference`]: an arbitrary-precision oracle for the two modules above.
//! - [`telemetry`]: per-tensor value-class counts and denormal summaries.
//! - [`training`]: a toy mixed-precision training harness with master
//!   weights and dynamic loss scaling.

pub mod formats;
pub mod instructions;
pub mod reference;
pub mod rounding;
pub mod selftest;
pub mod telemetry;
pub mod tensor;
pub mod training;

pub use formats::{decode16, encode16, hex_f32, FormatError, FpClass, FpFormat, FpValue};
pub use instructions::{fmac, fmac8_dot, fmacs, mac, macs, matmul, AccumMode};
pub use rounding::{round_f32, roundfp, roundfp_tensor, RoundFlags, RoundingOutcome};
pub use telemetry::{DenormalStats, Phase, Recorder, RunMeta, RunSummary, TelemetrySink};
pub use tensor::QuantTensor;
