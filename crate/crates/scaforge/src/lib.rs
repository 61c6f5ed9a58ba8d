//! File formats, model checkpoints and the command-line workflow built on
//! [`scaforge_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
mod le;
pub mod logprob;
pub mod report;
pub mod scat;

pub use error::{Error, FormatError};
