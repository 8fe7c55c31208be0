//! Time-discrete approximate mean curvature flow of atomic varifolds.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barriers;
pub mod cli_io;
pub mod error;
pub mod exec;
pub mod fields;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod mollifier;
pub mod scenarios;
pub mod spatial;
pub mod tolerances;
pub mod varifold;
pub mod verdict;

pub use error::{Error, Result};
