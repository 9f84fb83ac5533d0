//! Floating-point reference Mamba2 model: configuration, weights, the tensor
//! container and the decode step.

pub mod config;
pub mod container;
pub mod decode;
pub mod weights;

pub use config::{load_config, save_config, MambaConfig};
pub use container::{Container, DType};
pub use decode::{
    argmax, decode_step, decode_step_with, greedy_decode, perplexity, ssm_step, ActSite,
    DecodeState, LayerState, SsmDims, SsmInputs,
};
pub use weights::{load_weights, save_weights, InitOptions, LayerWeights, ModelWeights};
