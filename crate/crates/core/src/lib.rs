//! Super-resolution toolkit for grayscale root imagery.
//!
//! The crate is self-contained: tensors, layer gradients, the optimizer, the
//! image pipeline and the training loops are all implemented here, with no
//! external numerics. Everything that consumes randomness takes an explicit
//! seed, and training is single-threaded, so a given seed reproduces a run
//! bit for bit.

pub mod error;
pub mod eval;
pub mod image;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
