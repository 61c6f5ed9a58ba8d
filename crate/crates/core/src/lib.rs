//! Profiled side-channel attack primitives.
//!
//! Everything here is pure computation over in-memory data: AES first-round
//! leakage labels, trace preprocessing, a synthetic trace generator, three
//! probabilistic classifiers (Gaussian templates, a CART random forest and a
//! 1D CNN/ResNet trained from scratch) and the key-rank evaluation that turns
//! their per-trace class probabilities into key-byte evidence.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints
//! and the command-line workflow live in the `scaforge` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aes;
pub mod classifier;
mod error;
pub mod forest;
pub mod keyrank;
pub mod math;
pub mod matrix;
pub mod nn;
pub mod sim;
pub mod template;
pub mod traces;

pub use classifier::{LogProbMatrix, ProbClassifier, N_CLASSES};
pub use error::{Error, Result};
pub use matrix::Matrix;
