//! Integer decode path: quantized linear layers, the power-of-two SSM and the
//! quantized model container.

mod linear;
mod model;
pub mod ssm;

pub use linear::{qlinear, qlinear_requant};
pub use model::{
    dequantize_pot, int_ssm_step, load_quantized, qdecode_step, qdecode_step_probed,
    quantize_model, quantize_pot, save_quantized, QDecodeState, QLayer, QLayerState, QWeight,
    QuantSpec, QuantizedModel, SsmState, CONFIG_FILE, MODEL_FILE,
};
pub use ssm::{
    qssm_step, AluCounts, CountingAlu, IntAlu, IntSsmState, PotVec, QSsmInputs, SsmTile,
};
