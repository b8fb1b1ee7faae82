//! File formats and command-line driver for [`chaingraph_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;

pub use error::{AppError, Result};
pub use io::{load_dataset, read_matrix, write_dataset, write_matrix, Schema};
