// `!(x > 0.0)`-style range checks are deliberate throughout: unlike
// `x <= 0.0`, they also reject NaN arriving from parsed input.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod snapshot;
pub mod solver;
pub mod util;

pub use error::{Error, Result};
