//! Training, evaluation and reporting around the relative pose regression
//! network, plus the `rpr` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod overlap;
pub mod plot;
pub mod prepare;
pub mod train;

pub use error::{HarnessError, Result};
