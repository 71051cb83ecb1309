//! Deterministic kinetic solver for the Boltzmann equation on a slab with
//! prescribed incoming boundary data.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod collision;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod hydro;
pub mod linearized;
pub mod par;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
