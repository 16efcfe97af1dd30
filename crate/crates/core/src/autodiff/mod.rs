//! Dense 2-D tensors with a reverse-mode tape.
//!
//! Every value on a [`Tape`] is a row-major matrix; vectors are `(1, n)`.
//! Parameters live in a [`ParamSet`] that the tape borrows, so building a
//! graph never copies weights.

pub mod check;
mod kernels;
mod optim;
mod params;
mod serialize;
mod tape;

use thiserror::Error;

pub use optim::{Adam, Optimizer, Sgd};
pub use params::{Gradients, Param, ParamId, ParamSet, Tensor};
pub use serialize::{read_params, write_params, MAGIC, VERSION};
pub use tape::{Padding, Tape, Var};

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("backward already ran on this tape; call reset first")]
    BackwardTwice,
    #[error("loss must be a 1x1 value")]
    NotScalar,
    #[error("every target position is padding")]
    AllPadding,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T, AutodiffError> {
    Err(AutodiffError::Shape { op, detail: detail.into() })
}
