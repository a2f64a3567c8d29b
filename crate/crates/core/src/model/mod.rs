//! Toy multimodal decoder: frozen image features go through a two-layer
//! connector, are prefixed to the text tokens, and the whole sequence runs
//! through pre-norm causal transformer blocks.
//!
//! Positions use one learned table shared by image and text positions.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::ModelConfig;
pub use forward::{
    build_causal_mask, forward, infer, project_image, Activation, ForwardOutput, ForwardValues, MultimodalBatch,
};
pub use params::{param_layout, BlockWeights, Init, ModelParams, ParamSpec, Weights};
