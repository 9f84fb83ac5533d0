//! Reference model, Hadamard rotations and integer quantization for
//! Mamba2-style selective state space language models.

pub mod corpus;
pub mod error;
pub mod hadamard;
pub mod model;
pub mod qengine;
pub mod quant;
pub mod rotation;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
