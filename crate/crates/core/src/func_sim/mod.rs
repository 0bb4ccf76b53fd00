//! Functional simulation of crossbar-mapped encoders at toy scale.

pub mod crossbar;
pub mod model;
pub mod ops;
pub mod quant;
pub mod tensor_io;

pub use crossbar::{
    adc_quantize, adc_step, mvm_bitserial, program_crossbar, program_matrix, CrossbarState, MappedMatrix,
    NoiseForm, NoiseModel,
};
pub use model::{
    model_forward, toy_config, toy_input, CrossbarSetup, Execution, ForwardOutput, SimStats, Simulator,
    ToyWeights,
};
pub use ops::{attention_forward, gelu, layer_norm, stable_softmax, tb_forward};
pub use quant::QuantizedMatrix;
