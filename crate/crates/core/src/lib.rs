//! Pseudo-spectral solver and structure diagnostics for the compressible
//! Navier–Stokes–Landau–Lifshitz–Gilbert magnetoelastic system on periodic domains.

// `!(x > floor)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calc;
pub mod config;
pub mod deformation;
pub mod energetics;
pub mod error;
pub mod grid;
pub mod io;
pub mod mms;
pub mod model_full;
pub mod model_perturb;
pub mod runner;
pub mod state;
pub mod stepper;
pub mod varcheck;

pub use error::{Error, Result};
