//! Simulation of a single laser-probed atomic spin: Larmor precession plus the
//! probe's tensor light shift, optical-pumping decoherence, the resulting
//! Faraday-rotation signal, and the envelope analysis used to read collapse,
//! revival and decay times off it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod decoherence;
pub mod error;
pub mod evolution;
pub mod exec;
pub mod light_shift;
pub mod signal;
pub mod spin;

pub use error::{Error, Result};
