//! The hierarchical network, its parameters and checkpoint format.

pub mod checkpoint;
mod config;
mod layers;
mod mitst;
mod params;
mod probe;
mod time_encoding;

pub use config::{ModelConfig, SourceSpec};
pub use layers::{apply_stack, Block, GegluFeedForward, LayerNorm, Linear, Session, LAYER_NORM_EPS};
pub use mitst::{
    feature_transformer_group, its_transformer_group, projection_group, tokenizer_group, ActivationBundle,
    ForwardVars, Mitst, Prediction, GROUP_FUSION, GROUP_HEAD, GROUP_SOURCE_TRANSFORMER,
};
pub use params::{Init, ParamStore, ParamTensor};
pub use probe::random_input;
pub use time_encoding::{channel_period, encode_offsets, time_encode};
