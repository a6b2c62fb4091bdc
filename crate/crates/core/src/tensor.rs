use thiserror::Error;

use crate::formats::{FpClass, FpFormat};
use crate::rounding::round_f32;
use crate::telemetry::ClassCounts;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements, got {got}")]
    Len {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("value at index {index} is not representable in {format}")]
    NotRepresentable { index: usize, format: FpFormat },
    #[error("expected a 2-D tensor, got shape {0:?}")]
    NotMatrix(Vec<usize>),
    #[error("inner dimensions disagree: {left:?} x {right:?}")]
    InnerMismatch { left: Vec<usize>, right: Vec<usize> },
}

/// A dense row-major tensor whose elements are all representable in one
/// format.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    format: FpFormat,
}

impl QuantTensor {
    /// Wraps already-representable values, checking the invariant.
    pub fn new(shape: Vec<usize>, data: Vec<f32>, format: FpFormat) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Len {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data
            .iter()
            .position(|&x| round_f32(x, format).to_bits() != x.to_bits() && !x.is_nan())
        {
            return Err(TensorError::NotRepresentable { index, format });
        }
        Ok(QuantTensor {
            shape,
            data,
            format,
        })
    }

    pub(crate) fn from_rounded(shape: Vec<usize>, data: Vec<f32>, format: FpFormat) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        QuantTensor {
            shape,
            data,
            format,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn format(&self) -> FpFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn class_counts(&self) -> ClassCounts {
        ClassCounts::of(&self.data, self.format)
    }

    pub fn count(&self, class: FpClass) -> u64 {
        self.class_counts().get(class)
    }
}
