//! Minimal reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Forward values are computed eagerly when an operation is recorded on a
//! [`Tape`]. [`Tape::backward`] walks the recorded operations in reverse,
//! summing gradients into every leaf that requires them, and clears the tape.
//! Parameters live outside the tape as [`Tensor`]s; a training step binds them
//! as leaves, runs the forward pass, calls `backward` and hands the gradients
//! to [`Adam`].

mod adam;
mod error;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use error::AutodiffError;
pub use tape::{Gradients, OpKind, OpSpec, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;
