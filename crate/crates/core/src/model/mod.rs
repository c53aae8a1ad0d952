//! Word-level encoder-decoder transformer trained from scratch.

mod checkpoint;
mod decode;
pub mod layers;
mod params;
mod tensor;
mod train;
mod transformer;
mod vocab;

pub use checkpoint::{
    load_checkpoint, read_container, save_checkpoint, write_container, Checkpoint, Container, FORMAT_VERSION, MAGIC,
};
pub use decode::greedy_decode_batch;
pub use params::{
    AttnParams, DecoderLayerParams, EncoderLayerParams, FfnParams, LmParams, ModelConfig, NormParams, ParamTree,
};
pub use tensor::Tensor;
pub use train::{train, PrefixHook, StepRecord, TrainConfig, TrainItem, TrainLog};
pub use transformer::{encode, encode_backward, loss, loss_and_grads, teacher_forced_logits, PrefixStates, TokenBatch};
pub use vocab::{prompt_tokens, Vocab, BOS, EOS, PAD, UNK};

use thiserror::Error;

use crate::taskgen::TaskId;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input of {len} tokens exceeds max length {max}")]
    LengthExceeded { len: usize, max: usize },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("no prefix for task {0}")]
    MissingTask(TaskId),
    #[error("checkpoint format mismatch: {0}")]
    VersionMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `[Z; X]`: prompt tokens followed by source tokens.
pub fn encode_input(prompt: &[u32], source: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
    let len = prompt.len() + source.len();
    if len > max_len {
        return Err(ModelError::LengthExceeded { len, max: max_len });
    }
    Ok(prompt.iter().chain(source).copied().collect())
}

/// Encoder input for the transformer: `[Z; X]` plus a closing EOS.
pub fn encoder_tokens(prompt: &[u32], source: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
    let mut seq = encode_input(prompt, source, max_len)?;
    seq.push(EOS);
    Ok(seq)
}
