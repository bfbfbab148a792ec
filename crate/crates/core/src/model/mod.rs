//! Encoder–decoder Transformer backbone shared by the baseline, DPE and
//! two-pass models.

mod config;
mod transformer;

pub use config::{Injection, ModelConfig, BOS_ID, EOS_ID, PAD_ID, RESERVED, UNK_ID};
pub(crate) use config::MODEL_KEYS;
pub use transformer::{
    log_softmax, sinusoidal_pe, Bound, Encoded, EncoderState, Losses, ParamSet, SeqBatch, TrainBatch,
    Transformer,
};
