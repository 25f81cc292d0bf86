//! Derivative machinery.
//!
//! Two layers cooperate:
//!
//! * [`Jet`] and the batched [`JetLayout`] planes carry derivatives of
//!   network outputs with respect to input coordinates (forward, up to
//!   order four, pure derivatives only).
//! * [`Tape`] records the batched forward computation, jets included, and
//!   a single reverse sweep returns the gradient of the scalar loss with
//!   respect to every network parameter.

mod fdcheck;
mod jet;
mod layout;
mod tape;

pub use fdcheck::{central_difference, fd_check, relative_error, richardson_difference, DEFAULT_STEPS};
pub use jet::{compose, compose_adjoint, Activation, Jet, JetOp, Operand, MAX_ORDER};
pub use layout::JetLayout;
pub use tape::{Gradient, Tape, Tensor, Var};
