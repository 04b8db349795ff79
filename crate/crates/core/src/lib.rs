// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod lowerlevel;
pub mod outer;
pub mod penalty;
pub mod upper;
pub mod verify;

pub use error::{Error, Result};
