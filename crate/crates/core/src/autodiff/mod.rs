//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! addressed through copyable [`Var`] handles; [`Tape::backward`] walks the
//! record in exact reverse and returns the gradients of all leaves.

mod param;
mod tape;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AutodiffError {
    #[error("backward requires a 1x1 loss, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("variable was recorded on a different tape")]
    ForeignVar,
    #[error("parameter name {0:?} is already taken")]
    DuplicateParameter(String),
}
