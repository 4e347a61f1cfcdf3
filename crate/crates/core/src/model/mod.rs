//! The parallel-decoding captioning network.

mod config;
mod layers;
mod params;
mod pdvc;

pub use config::ModelConfig;
pub use layers::{sinusoidal_positions, DeformAttn, FeedForward, LayerNorm, Linear, SelfAttn};
pub use params::{linear_bound, to_f32_grid, uniform, Bound, ParamId, ParamStore};
pub use pdvc::{
    ForwardOutput, GeneratedCaption, LayerOutput, Pdvc, VOCAB_OUT_BIAS, VOCAB_OUT_WEIGHT, WORD_EMBED,
};
