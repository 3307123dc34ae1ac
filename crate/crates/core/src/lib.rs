//! Numerical laboratory for Hamilton- and Li-Yau-type gradient estimates of
//! positive solutions of `∂_t u = ½ Δ_{g_t} u` under evolving metrics.

// `!(x > 0.0)` is deliberate: it rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the tensor index notation
#![allow(clippy::needless_range_loop)]

pub mod bounds;
pub mod calculus;
pub mod cli;
pub mod drift;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod grid;
pub mod inequality;
pub mod montecarlo;
pub mod quad;

pub use error::{Error, Result};
