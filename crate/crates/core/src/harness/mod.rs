//! k-sweep experiments: retrieve, optionally annotate and repeat, fit the
//! budget, render, generate, score, and report deltas from the zero-shot
//! baseline.

mod config;
mod report;
mod run;

pub use config::{EmbeddingSpec, ExperimentConfig, HttpSpec, ModelSpec, RetrieverSpec};
pub use report::{emit_report, load_result, render_report, DELTAS_CSV, DELTAS_MD, RESULTS_FILE};
pub use run::{
    run_experiment, run_experiment_with, score_predictions, Baseline, CellResult, Experiment, Prediction,
    RefractSummary, RunResult, RunStats, Scored,
};

use std::path::Path;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::metrics::MetricError;
use crate::model::{CacheError, ModelError};
use crate::prompt::PromptError;
use crate::refract::RefractError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Refract(#[from] RefractError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("test example {id:?}: {source}")]
    Model {
        id: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
