// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dictionaries;
pub mod error;
pub mod hilbert;
pub mod io;
pub mod oblique;
pub mod pursuit;
pub mod simulate;

pub use error::{Error, Result};
