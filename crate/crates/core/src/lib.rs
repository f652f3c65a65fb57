//! Morse chain complexes for smooth functions on flat compact domains with
//! corners: products of intervals and circles, and bounded simple polytopes.
//!
//! The pipeline: parse a scalar field, find the critical points of every face
//! restriction, classify them, integrate the projected gradient flow to
//! enumerate connecting trajectories between consecutive indices, assemble
//! signed integer boundary matrices, and verify that the resulting chain
//! complex squares to zero and reproduces the homology of the domain.

pub mod cli;
pub mod complex;
pub mod critical;
pub mod domain;
pub mod expr;
pub mod field;
pub mod flow;
pub(crate) mod linalg;
pub mod metric;
pub mod problem;
pub mod report;
pub mod snf;
#[doc(hidden)]
pub mod numcheck;

pub use domain::{Domain, Factor, StratumId};
pub use expr::Expression;
pub use metric::Metric;
