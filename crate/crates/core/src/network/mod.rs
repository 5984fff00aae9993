//! The full segmentation network: conv stem, stride-8 attention block,
//! transformer encoder, refined skips with the global residue, and decoder.

mod checkpoint;
mod config;
mod model;
mod transformer;

pub use checkpoint::{checkpoint_info, CHECKPOINT_FORMAT};
pub use config::{AttentionBlock, GlPlacement, ModelConfig, Preset, TransformerConfig, TOKEN_STRIDE};
pub use model::{
    argmax_labels, BlockSlot, Decoder, Encoder, EncoderOutput, MipcNet, Model, SkipPipeline, StemStage, UpBlock,
};
pub use transformer::{MultiHeadAttention, Transformer, TransformerLayer};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
