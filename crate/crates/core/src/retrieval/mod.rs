//! Demonstration retrievers.
//!
//! Every retriever produces a full ranking of the pool; [`finish`] then cuts
//! it down to `k`, either by plain truncation or by the class-balancing
//! round robin. Scored rankings are ordered by descending score with ties
//! broken by ascending demonstration id. The random retriever keeps its
//! shuffle order.

mod balance;
mod dense;
mod random;
mod tfidf;

pub use balance::balance_classes;
pub use dense::{
    embed_query, load_sidecar, prefixed_text, retrieve_dense, score_multitask, write_sidecar, DenseIndex,
    EmbeddingSource, EmbeddingStore, HttpEmbedder, TextEmbedder,
};
pub use random::{retrieve_random, shuffle_pool};
pub use tfidf::{build_tfidf_index, retrieve_tfidf, SparseVector, TfIdfIndex};

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Demonstration, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Random,
    Tfidf,
    Dense,
    Multitask,
}

impl std::fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrieverKind::Random => "random",
            RetrieverKind::Tfidf => "tfidf",
            RetrieverKind::Dense => "dense",
            RetrieverKind::Multitask => "multitask",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDemo {
    pub demo: Demonstration,
    pub score: f64,
    pub retriever: RetrieverKind,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRequest {
    pub query_text: String,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub balance: bool,
}

impl RetrievalRequest {
    pub fn new(query_text: impl Into<String>, k: usize) -> Self {
        Self {
            query_text: query_text.into(),
            k,
            seed: 0,
            balance: false,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn balanced(mut self, balance: bool) -> Self {
        self.balance = balance;
        self
    }
}

/// Selected demonstrations. `clipped` is set when `k` exceeded the pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub demos: Vec<ScoredDemo>,
    pub requested_k: usize,
    pub clipped: bool,
}

impl Retrieved {
    pub fn ids(&self) -> Vec<&str> {
        self.demos.iter().map(|d| d.demo.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RetrievalError {
    #[error("demonstration pool is empty")]
    EmptyPool,
    #[error("k must be positive")]
    ZeroK,
    #[error("query vector has dimension {got}, store has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no embedding for demonstration {0:?}")]
    MissingVector(String),
    #[error("embedding for {0:?} has zero norm")]
    ZeroVector(String),
    #[error("duplicate embedding id {0:?}")]
    DuplicateVector(String),
    #[error("sidecar line {line}: {reason}")]
    SidecarMalformed { line: usize, reason: String },
    #[error("embedding endpoint: {0}")]
    Endpoint(String),
    #[error("{0}")]
    Io(String),
}

/// Score order: descending, `-0.0` treated as `0.0`, then ascending id.
pub fn compare_scored(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    (b_score + 0.0).total_cmp(&(a_score + 0.0)).then_with(|| a_id.cmp(b_id))
}

/// Sort the whole pool by score and assign ranks.
pub(crate) fn rank_by_score(demos: &[Demonstration], scores: Vec<f64>, kind: RetrieverKind) -> Vec<ScoredDemo> {
    let mut order: Vec<usize> = (0..demos.len()).collect();
    order.sort_by(|&a, &b| compare_scored(scores[a], &demos[a].id, scores[b], &demos[b].id));
    order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| ScoredDemo {
            demo: demos[i].clone(),
            score: scores[i],
            retriever: kind,
            rank,
        })
        .collect()
}

/// Apply `k` clipping and the optional balancing pass to a full ranking.
pub fn finish(
    ranked: Vec<ScoredDemo>,
    request: &RetrievalRequest,
    task: &TaskSpec,
) -> Result<Retrieved, RetrievalError> {
    if request.k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if ranked.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let k = request.k.min(ranked.len());
    let clipped = request.k > ranked.len();
    if clipped {
        log::warn!("k = {} exceeds pool size {}; clipped", request.k, ranked.len());
    }
    let demos = if request.balance {
        balance_classes(ranked, k, task)
    } else {
        let mut ranked = ranked;
        ranked.truncate(k);
        ranked
    };
    Ok(Retrieved {
        demos,
        requested_k: request.k,
        clipped,
    })
}
