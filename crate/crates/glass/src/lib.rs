//! Command-line driver, file formats and experiment pipelines for
//! [`glass_core`].

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use error::{AppError, Result};
pub use glass_core as core;
