//! File formats, batch CLI and HTTP service around `eddyscope-core`.

pub use eddyscope_core as core;

pub mod cli;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod server;

pub use error::{Error, Result};
