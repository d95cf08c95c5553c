//! Multi-view information bottleneck solvers over finite alphabets.
//!
//! The crate covers exact probability arithmetic ([`prob`]), the linear
//! operators and objectives of the consensus/complement formulation, three
//! ADMM-based solvers, a Blahut–Arimoto baseline, Bayes-decoder evaluation,
//! convergence diagnostics, and a sweep runner used by the `mvib` binary.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod complement;
pub mod consensus;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod incremental;
pub mod objectives;
pub mod operators;
pub mod prob;
pub mod simplex;

pub use error::{Error, Result};
pub use prob::{Channel, Dataset, JointModel, JointTable, ProbVector};
