//! Synthetic corpus: grammar, oracle transforms, task registry, datasets.

mod corpus;
mod lexicon;
mod oracle;
mod sentence;
mod task;
mod verify;

pub use corpus::{
    generate_corpus, random_structure, read_corpus, read_task_file, split_of, task_file_name, write_corpus, Corpus,
    CorpusSpec, Example, Split,
};
pub use lexicon::{Agreement, Determiner, Lexicon, LexiconSizes, Noun, Number, Verb, FUNCTION_WORDS};
pub use oracle::{apply_atomic, apply_composite, apply_task, Applied, NotApplicable};
pub use sentence::{prettify, NounPhrase, PpPosition, PrepPhrase, SentenceStructure, Tense, Voice};
pub use task::{
    lookup_composite, registry_valid_composites, AtomicTask, Category, CompositeEntry, CompositeOrder, TaskId,
};
pub use verify::{check_laws, verify_corpus, VerifyReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaskgenError {
    #[error("{0}+{1} is not a registered composite")]
    UnregisteredComposite(AtomicTask, AtomicTask),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("lexicon exhausted for {task}: wanted {wanted} distinct sentences, found {found}")]
    InfeasibleSpec { task: TaskId, wanted: usize, found: usize },
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("{file}:{line}: {message}")]
    Record { file: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
