//! Files, experiments and the command line around `latentsp-core`.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod io;
pub mod verify;

pub use error::{Error, Result};
