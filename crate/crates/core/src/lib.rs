//! Identification and tracking of switching network topologies from
//! cascade data under a switched structural equation model
//!
//! ```text
//! Y_t = A^{sigma(t)} Y_t + B^{sigma(t)} X + E_t
//! ```
//!
//! where `A^s` is a hollow adjacency matrix, `B^s` a diagonal gain matrix,
//! `X` the node-by-contagion susceptibilities and `sigma(t)` the active
//! state at interval `t`.

// Negated float comparisons below are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod closed_form;
pub mod error;
pub mod identifiability;
pub mod initializer;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod tracker;

pub use error::{Error, Result};
pub use model::{CascadeSnapshot, ExogenousMatrix, StatePair, SwitchSequence};
