// Dense index loops read closer to the matrix algebra; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod graph;
pub mod learn;
pub mod matlib;
pub mod par;
pub mod plant;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
