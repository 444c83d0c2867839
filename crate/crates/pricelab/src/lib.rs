//! Monte Carlo and simulated-quantum pricing for multi-asset GBM, CIR and
//! Heston models with exact increment sampling.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod charinv;
pub mod core;
pub mod dists;
pub mod error;
pub mod experiments;
pub mod levy;
pub mod mc;
pub mod models;
pub mod qsim;
pub mod rng;
pub mod schemes;

pub use error::{Error, Result};
