//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] borrows a [`ParamStore`], records operations as they run and
//! produces per-parameter [`Gradients`] from a scalar loss. Tapes are cheap and
//! independent, so one tape per training sample lets callers evaluate a batch
//! in parallel and reduce the gradients afterwards.

pub mod check;
mod optim;
mod params;
mod tape;
pub mod tensor;

pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Mask, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter `{0}` registered twice")]
    DuplicateParam(String),
}
