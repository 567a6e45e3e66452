use std::collections::BTreeMap;

use serde::Serialize;

use super::{finish, rank_by_score, RetrievalError, RetrievalRequest, Retrieved, RetrieverKind};
use crate::dataset::{Demonstration, TaskSpec};
use crate::tokenize::{tokenize, TokenizerConfig};

/// L2-normalized sparse vector, entries sorted by term id.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SparseVector(pub Vec<(u32, f64)>);

impl SparseVector {
    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j) = (0, 0);
        let mut sum = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    sum += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        sum
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// TF-IDF index over a demonstration pool.
///
/// Term ids follow lexicographic term order. Weights are raw term count times
/// smoothed idf, `ln((1 + N) / (1 + df)) + 1`, and every document vector is
/// L2-normalized (empty documents keep the zero vector).
#[derive(Debug, Clone, Serialize)]
pub struct TfIdfIndex {
    tokenizer: TokenizerConfig,
    vocabulary: BTreeMap<String, u32>,
    idf: Vec<f64>,
    doc_vectors: BTreeMap<String, SparseVector>,
    doc_count: usize,
    #[serde(skip)]
    demos: Vec<Demonstration>,
}

pub fn build_tfidf_index(pool: &[Demonstration], tokenizer: TokenizerConfig) -> Result<TfIdfIndex, RetrievalError> {
    if pool.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let docs: Vec<Vec<String>> = pool.iter().map(|d| tokenize(&d.input, tokenizer)).collect();

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &docs {
        let mut terms: Vec<&str> = doc.iter().map(String::as_str).collect();
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = pool.len() as f64;
    let vocabulary: BTreeMap<String, u32> = df.keys().enumerate().map(|(i, t)| (t.to_string(), i as u32)).collect();
    let idf: Vec<f64> = df
        .values()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();

    let mut index = TfIdfIndex {
        tokenizer,
        vocabulary,
        idf,
        doc_vectors: BTreeMap::new(),
        doc_count: pool.len(),
        demos: pool.to_vec(),
    };
    let vectors: Vec<(String, SparseVector)> = pool
        .iter()
        .zip(&docs)
        .map(|(d, tokens)| (d.id.clone(), index.weigh(tokens)))
        .collect();
    index.doc_vectors = vectors.into_iter().collect();
    Ok(index)
}

impl TfIdfIndex {
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocabulary.get(term).copied()
    }

    pub fn idf(&self, term_id: u32) -> f64 {
        self.idf[term_id as usize]
    }

    pub fn doc_vector(&self, id: &str) -> Option<&SparseVector> {
        self.doc_vectors.get(id)
    }

    pub fn demos(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        self.tokenizer
    }

    fn weigh(&self, tokens: &[String]) -> SparseVector {
        let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
        for t in tokens {
            if let Some(&id) = self.vocabulary.get(t) {
                *counts.entry(id).or_default() += 1;
            }
        }
        let raw: Vec<(u32, f64)> = counts
            .into_iter()
            .map(|(id, tf)| (id, tf as f64 * self.idf[id as usize]))
            .collect();
        let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SparseVector::default();
        }
        SparseVector(raw.into_iter().map(|(id, w)| (id, w / norm)).collect())
    }

    /// Query vector under the index idf; terms outside the vocabulary are dropped.
    pub fn vectorize(&self, text: &str) -> SparseVector {
        self.weigh(&tokenize(text, self.tokenizer))
    }

    /// Cosine similarity between two raw texts.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        self.vectorize(a).dot(&self.vectorize(b))
    }

    /// Cosine of every pool document against the query, in pool order.
    pub fn scores(&self, query_text: &str) -> Vec<f64> {
        let q = self.vectorize(query_text);
        self.demos.iter().map(|d| q.dot(&self.doc_vectors[&d.id])).collect()
    }

    pub fn rank(&self, query_text: &str) -> Vec<super::ScoredDemo> {
        rank_by_score(&self.demos, self.scores(query_text), RetrieverKind::Tfidf)
    }
}

pub fn retrieve_tfidf(
    index: &TfIdfIndex,
    request: &RetrievalRequest,
    task: &TaskSpec,
) -> Result<Retrieved, RetrievalError> {
    finish(index.rank(&request.query_text), request, task)
}
