//! The fusion network: shared projection, graph attention, pooling and
//! classification, plus the ablation variants.

mod check;
mod config;
mod forward;
pub mod layers;
mod params;

pub use check::{model_grad_check, tiny_input, ModelGradCheck};
pub use config::{ModelConfig, Variant};
pub use forward::{
    cross_entropy_loss, Encoded, ForwardOutput, GameOn, ModelInput, Prediction, SampleGraphs,
    VariantGraph, PROB_FLOOR,
};
pub use params::{count_parameters, layout_for, param_layout, Init, ModelParams, ParamVars, TensorSpec};
