//! Training strategies and experiment orchestration.

mod experiment;
mod records;
mod strategy;

pub use experiment::{
    corpus_dir, run_experiment, run_hash, stable_hash, write_atomic, Dataset, Experiment, ExperimentConfig, RunRecord,
    ScalingConfig, ScalingPlan, TrainSummary,
};
pub use records::{read_records, record_path, write_record};
pub use strategy::{assert_monotone, build_split, compatible, Method, PipelineOrder, Strategy, StrategyCategory, StrategySplit};

use thiserror::Error;

use crate::composition::CompositionError;
use crate::model::ModelError;
use crate::taskgen::TaskgenError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("{0} is not a registered composite")]
    UnregisteredComposite(String),
    #[error("{method} cannot be trained under {strategy}")]
    IncompatibleMethodStrategy { method: Method, strategy: Strategy },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Taskgen(#[from] TaskgenError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
    #[error("{}:{line}: {message}", file.display())]
    Record { file: std::path::PathBuf, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
