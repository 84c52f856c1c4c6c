//! The two-branch emotion model: conv acoustic encoder, transformer symbolic
//! encoder, cross-domain attention fusion, heads, losses and checkpoints.

mod checkpoint;
mod config;
mod emotion;
mod label;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, ParamRecord,
    CHECKPOINT_MAGIC,
};
pub use config::{
    AcousticEncoderConfig, Branches, CdaConfig, ModelConfig, SymbolicEncoderConfig, CONV_CHANNELS,
    ENCODER_LAYERS,
};
pub use emotion::{
    predict, total_loss, EmotionModel, ForwardVars, LossBreakdown, LossVars, LossWeights,
    ModelOutput, Prediction,
};
pub use label::{EmotionLabel, Quadrant};
