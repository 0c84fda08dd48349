//! Scientific deep-learning engine: dense network approximators built on a
//! computational graph with arbitrary-order automatic differentiation.
//!
//! The crate is organized around five layers:
//!
//! - [`graph`] — expression arena, batched evaluation, symbolic
//!   differentiation with respect to input variables, and reverse-mode
//!   gradients with respect to trainable weights.
//! - [`net`] — dense feed-forward functionals, residual blocks, trainable
//!   scalar parameters, and weight persistence.
//! - [`train`] — optimization targets (data, ties, zero residuals),
//!   mini-batch Adam/SGD training, and training history.
//! - [`data`] — sampling grids, boundary-point identification, midpoint
//!   quadrature, and CSV ingestion/export.
//! - [`problems`] — ready-to-run case studies: curve fitting, Burgers,
//!   Navier–Stokes parameter identification, von Mises residual checks,
//!   and the weak-form heat equation.

pub mod data;
pub mod graph;
pub mod net;
pub mod problems;
pub mod train;
