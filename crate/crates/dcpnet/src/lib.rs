//! Training, evaluation, file formats and the command-line front end for the
//! collaborative perception pipeline in `dcpnet-core`.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod pnm;
pub mod report;
pub mod train;

pub use error::{Error, Result};
