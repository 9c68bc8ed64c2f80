//! Differentiable cone-beam CT geometry and gradient-based rigid motion
//! compensation.
//!
//! The pipeline maps spline motion parameters to projection matrices
//! ([`motion`]), backprojects filtered projections with those matrices
//! ([`backprojector`]), and scores the result with an autofocus metric
//! ([`objectives`]). Every stage provides an exact vector–Jacobian product, so
//! the motion is estimated by plain gradient descent ([`optimizer`]).

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backprojector;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod motion;
pub mod objectives;
pub mod optimizer;
pub mod projector;
pub mod volume;

pub use error::{Error, Result};
