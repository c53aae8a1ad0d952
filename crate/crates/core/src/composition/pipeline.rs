//! Sequential inference: each stage applies one atomic task to the previous
//! stage's output.

use std::fmt;

use super::prompt::{render_prompt, PromptTemplate};
use super::CompositionError;
use crate::model::{encoder_tokens, greedy_decode_batch, LmParams, ModelError, Vocab};
use crate::taskgen::{apply_atomic, AtomicTask, CompositeOrder, Lexicon, TaskId};
use crate::Scalar;

/// Output of a rule-based stage whose precondition fails.
pub const NOT_APPLICABLE: &str = "<na>";

/// Anything that can run one atomic task over a batch of texts.
pub trait StageModel {
    fn transform(&self, task: AtomicTask, inputs: &[String]) -> Result<Vec<String>, ModelError>;
}

/// Exact stage backed by the grammar oracle. Unparsable inputs and inputs
/// the task does not apply to become [`NOT_APPLICABLE`].
pub struct OracleStage<'a> {
    pub lexicon: &'a Lexicon,
}

impl StageModel for OracleStage<'_> {
    fn transform(&self, task: AtomicTask, inputs: &[String]) -> Result<Vec<String>, ModelError> {
        Ok(inputs
            .iter()
            .map(|text| {
                self.lexicon
                    .parse(text)
                    .ok()
                    .and_then(|s| apply_atomic(task, &s).ok())
                    .map_or_else(|| NOT_APPLICABLE.to_string(), |s| s.realize())
            })
            .collect())
    }
}

/// Stage backed by a prompted language model.
pub struct LmStage<'a, T> {
    pub params: &'a LmParams<T>,
    pub vocab: &'a Vocab,
    pub template: PromptTemplate,
}

impl<T: Scalar> StageModel for LmStage<'_, T> {
    fn transform(&self, task: AtomicTask, inputs: &[String]) -> Result<Vec<String>, ModelError> {
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        predict_prompt(self.params, self.vocab, self.template, TaskId::Atomic(task), &refs)
    }
}

const DECODE_CHUNK: usize = 64;

/// Decodes with a textual prompt. Outputs are capped so that they always fit
/// as the source of another atomic stage.
pub fn predict_prompt<T: Scalar>(
    params: &LmParams<T>,
    vocab: &Vocab,
    template: PromptTemplate,
    task: TaskId,
    sources: &[&str],
) -> Result<Vec<String>, ModelError> {
    let max_len = params.config.max_len;
    let prompt = vocab.encode_tokens(&render_prompt(template, task));
    let atomic_prompt = 2;
    let mut out = Vec::with_capacity(sources.len());
    for chunk in sources.chunks(DECODE_CHUNK) {
        let enc = chunk
            .iter()
            .map(|s| encoder_tokens(&prompt, &vocab.encode(s), max_len))
            .collect::<Result<Vec<_>, _>>()?;
        let decoded = greedy_decode_batch(params, &enc, None, max_len - atomic_prompt.min(max_len - 1));
        out.extend(decoded.iter().map(|ids| vocab.decode(ids)));
    }
    Ok(out)
}

/// Ordered atomic stages, each with its own model.
pub struct PipelinePlan<'a> {
    stages: Vec<(AtomicTask, &'a dyn StageModel)>,
}

impl fmt::Debug for PipelinePlan<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.stages.iter().map(|(t, _)| t)).finish()
    }
}

impl<'a> PipelinePlan<'a> {
    pub fn new(stages: Vec<(AtomicTask, &'a dyn StageModel)>) -> Result<Self, CompositionError> {
        if stages.is_empty() {
            return Err(CompositionError::EmptyPlan);
        }
        Ok(PipelinePlan { stages })
    }

    /// Two-stage plan for a composite, executed in the given order, with the
    /// same model serving both stages.
    pub fn for_composite(
        first: AtomicTask,
        second: AtomicTask,
        order: CompositeOrder,
        model: &'a dyn StageModel,
    ) -> Self {
        let [a, b] = order.sequence(first, second);
        PipelinePlan { stages: vec![(a, model), (b, model)] }
    }

    pub fn tasks(&self) -> Vec<AtomicTask> {
        self.stages.iter().map(|(t, _)| *t).collect()
    }
}

/// Feeds every source through the stages in order and returns the last
/// stage's outputs. Intermediate outputs are passed on unchanged, whatever
/// they contain.
pub fn pipeline_infer(plan: &PipelinePlan<'_>, sources: &[String]) -> Result<Vec<String>, CompositionError> {
    let mut texts = sources.to_vec();
    for (i, (task, model)) in plan.stages.iter().enumerate() {
        texts = model.transform(*task, &texts).map_err(|source| CompositionError::Stage { stage: i, source })?;
    }
    Ok(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::{prettify, AtomicTask::*};

    const CARS: &str = "1,214 cars were sold last year by luxury automakers in the U.S. .";

    #[test]
    fn order_decides_whether_the_pipeline_succeeds() {
        let lex = Lexicon::full();
        let oracle = OracleStage { lexicon: &lex };
        let good = PipelinePlan::new(vec![(Pta, &oracle as &dyn StageModel), (Ppr, &oracle)]).unwrap();
        let out = pipeline_infer(&good, &[CARS.to_string()]).unwrap();
        assert_eq!(prettify(&out[0]), "Luxury automakers sold 1,214 cars last year.");
        let bad = PipelinePlan::new(vec![(Ppr, &oracle as &dyn StageModel), (Pta, &oracle)]).unwrap();
        assert_eq!(pipeline_infer(&bad, &[CARS.to_string()]).unwrap(), [NOT_APPLICABLE]);
    }

    #[test]
    fn single_stage_equals_direct_application() {
        let lex = Lexicon::full();
        let oracle = OracleStage { lexicon: &lex };
        let plan = PipelinePlan::new(vec![(Pta, &oracle as &dyn StageModel)]).unwrap();
        let direct = oracle.transform(Pta, &[CARS.to_string()]).unwrap();
        assert_eq!(pipeline_infer(&plan, &[CARS.to_string()]).unwrap(), direct);
        assert!(matches!(PipelinePlan::new(vec![]), Err(CompositionError::EmptyPlan)));
    }
}
