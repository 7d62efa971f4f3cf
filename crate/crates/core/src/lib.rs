//! Joint ridge estimation of precision matrices across several data classes.
//!
//! The crate fits class-specific precision matrices jointly under an ℓ2 penalty
//! that shrinks each class towards a target and fuses class differences, selects
//! the penalties by cross-validation, tests class homogeneity, and turns the
//! estimates into sparse conditional-independence graphs.

pub mod error;
pub mod estimator;
pub mod graphs;
pub mod inference;
pub mod linalg;
pub mod penalty;
pub mod selection;
pub mod sim;
pub mod targets;

pub use error::{Error, Result};
pub use linalg::SymMatrix;
