//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Values are dense row-major `f64` tensors. Every op records its inputs and
//! a backward rule; [`Tape::backward`] walks the record in reverse. Networks
//! keep their weights in a [`ParamStore`] and pull them onto a fresh tape for
//! each forward pass.

mod error;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use optim::{adam_step, Adam, AdamHyper, AdamMoments};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Param, ParamGrads, ParamId, ParamStore, Tensor};
