//! Multi-species BGK kinetic solver in slab geometry.
//!
//! The implicit half of the IMEX time integrator solves the nonlinear
//! moment system of a backward-Euler relaxation step with a Gauss-Seidel
//! type fixed-point iteration ([`gst`]), whose convergence is certified by
//! a computable contraction budget and a step-size rule that does not
//! depend on the stiffness parameter.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod error;
pub mod exec;
pub mod gst;
pub mod integrate;
pub mod kinetic;
pub mod mixture;
pub mod oracle;
pub mod output;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Execution;
