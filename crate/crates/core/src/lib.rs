//! Physics-informed neural networks trained with a sequential-correction
//! loss.
//!
//! The PDE residual at the current weights `w^k` is augmented with a
//! correction built from the difference between the current network and a
//! frozen copy at `w^{k-1}`:
//!
//! ```text
//! S = (f^k - f^{k-1}) / τ_sc - (γ / τ_α) Δ(f^k - f^{k-1})
//! ```
//!
//! The term vanishes at convergence, so the trained network still solves
//! the original problem, while during training it acts as a smoothed
//! residual-correction iteration.
//!
//! Modules, bottom up:
//!
//! * [`autodiff`]: input-derivative jets and a reverse-mode tape;
//! * [`network`]: sinusoidal-first-layer MLPs, parameters, checkpoints;
//! * [`problems`]: benchmark PDEs, residuals, the correction term, sampling;
//! * [`scale_loss`]: the corrected and baseline objectives, plus the
//!   linear-system demonstrations;
//! * [`trainer`]: Adam, the learning-rate schedule, the training loop;
//! * [`reference`]: spectral and finite-difference reference solvers.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod autodiff;
pub mod error;
pub mod network;
pub mod problems;
pub mod reference;
pub mod scale_loss;
pub mod trainer;

pub use error::{Error, Result};

/// The guide's chapters, compiled as doc-tests so the snippets stay current.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/jets.md")]
    struct Jets;
    #[doc = include_str!("../../../book/src/network.md")]
    struct Network;
    #[doc = include_str!("../../../book/src/problems.md")]
    struct Problems;
    #[doc = include_str!("../../../book/src/correction.md")]
    struct Correction;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/reference.md")]
    struct Reference;
}
