//! Command line and HTTP front end for noise-tolerant sketch retrieval.

pub mod cli;
pub mod config;
pub mod error;
pub mod server;

pub use error::{AppError, Result};
