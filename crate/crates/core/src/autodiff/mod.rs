//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in evaluation
//! order. Trainable values live in a [`ParamStore`] outside the tape and are
//! re-registered on a fresh tape for each forward pass.

mod adam;
mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradient_check, GradCheckReport, REL_ERROR_FLOOR};
pub use matrix::Matrix;
pub use params::{Checkpoint, CheckpointEntry, ParamStore};
pub use tape::{Gradients, SoftmaxMask, Tape, Var};

pub(crate) use tape::softmax_rows_value;
#[cfg(test)]
pub(crate) use tape::elu;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: (usize, usize) },
    #[error("softmax row {row} has no admissible entries")]
    EmptySoftmaxRow { row: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("mean of an empty tensor")]
    EmptyReduction,
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
