//! Composition mechanisms: prompt templates, prefix tuning with a learned
//! composer, and multi-stage pipelines.

mod pipeline;
mod prefix;
mod prompt;

pub use pipeline::{pipeline_infer, predict_prompt, LmStage, OracleStage, PipelinePlan, StageModel, NOT_APPLICABLE};
pub use prefix::{BankParams, ComposerParams, MlpParams, PrefixBank, PrefixCompose, PrefixConfig};
pub use prompt::{render_prompt, PromptTemplate};

use thiserror::Error;

use crate::model::{encoder_tokens, greedy_decode_batch, LmParams, ModelError, PrefixHook, Vocab};
use crate::taskgen::TaskId;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum CompositionError {
    #[error("a pipeline needs at least one stage")]
    EmptyPlan,
    #[error("pipeline stage {stage} failed: {source}")]
    Stage { stage: usize, source: ModelError },
}

/// Decodes with prefix states in place of a textual prompt.
pub fn predict_prefix<T: Scalar>(
    params: &LmParams<T>,
    vocab: &Vocab,
    bank: &mut PrefixBank<T>,
    task: TaskId,
    sources: &[&str],
) -> Result<Vec<String>, ModelError> {
    let max_len = params.config.max_len;
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(64) {
        let enc = chunk.iter().map(|s| encoder_tokens(&[], &vocab.encode(s), max_len)).collect::<Result<Vec<_>, _>>()?;
        let states = bank.forward(&vec![task; chunk.len()])?;
        let decoded = greedy_decode_batch(params, &enc, Some(&states), max_len);
        out.extend(decoded.iter().map(|ids| vocab.decode(ids)));
    }
    Ok(out)
}
