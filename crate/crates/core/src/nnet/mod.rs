//! The network: embeddings, passage and conversation encoders, unified
//! attention and the copy decoder.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use model::{
    attention_step, decode_step, embed_passage, encode, encode_conversation, encode_passage, forward, forward_trace,
    init_decoder, step_attention, DecoderState, EncoderOutputs, ForwardOutput, ForwardTrace, IndexedExample, Mode,
    StepAttention, StepOutput,
};
pub use params::Parameters;
