#![no_std]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod grad;
pub mod ingest;
pub mod math;
pub mod model;
pub mod predict;
pub mod rng;
pub mod simulate;
pub mod speller;
pub mod summary;
pub mod variational;
pub mod vi;

pub use error::{Error, Result};
