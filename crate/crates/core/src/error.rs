use alloc::string::String;
use alloc::vec::Vec;

use crate::regimes::ModeKind;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("tensor of shape {shape:?} needs {expected} values, got {got}")]
    DataLength { shape: Vec<usize>, expected: usize, got: usize },

    #[error("node reference belongs to a different tape")]
    ForeignNode,

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("mask length {mask} does not fit a sequence of {steps} steps (expected {expected})")]
    MaskLength { mask: usize, steps: usize, expected: usize },

    #[error("training diverged at epoch {epoch} in mode {mode}: {detail}")]
    Divergence { epoch: usize, mode: ModeKind, detail: String },

    #[error("integration produced a non-finite state at step {step}")]
    Integration { step: usize },

    #[error("every evaluation case diverged ({0} cases)")]
    AllDiverged(usize),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
