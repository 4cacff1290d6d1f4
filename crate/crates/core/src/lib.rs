//! Coupled optimization of a low-thrust spiral transfer and the solar-array
//! size that powers it.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod finite_diff;
pub mod fourier_guess;
pub mod nlp;
pub mod par;
pub mod power;
pub mod propagate;
pub mod propulsion;
pub mod quadrature;
pub mod scenario;
pub mod sizing;
pub mod transcription;

pub use error::{Error, Result};
