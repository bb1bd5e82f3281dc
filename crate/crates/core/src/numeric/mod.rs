//! Dense real/complex arithmetic, a reverse-mode gradient tape over the
//! small set of primitives the models use, Adam, and a finite-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod matrix;
mod tape;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{central_difference, check_gradients, GradCheckReport};
pub use matrix::{l1_norm, ComplexVec, RealMat};
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Shape, right: Shape },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Shape),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("row {row} out of range for parameter {param} with {rows} rows")]
    RowOutOfRange { param: String, row: usize, rows: usize },
}
