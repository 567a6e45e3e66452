//! Dense retrieval over precomputed embeddings.
//!
//! Vectors come from a sidecar file or an embedding endpoint; nothing here
//! embeds text locally. The multi-task scorer is the same exact scan over
//! embeddings of task-prefixed text (`"<task name>: <text>"`).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{finish, rank_by_score, RetrievalError, RetrievalRequest, Retrieved, RetrieverKind, ScoredDemo};
use crate::dataset::{Demonstration, TaskSpec};
use crate::http::JsonEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    File,
    Endpoint,
}

/// Unit-norm embeddings keyed by demonstration id. Vectors are normalized on
/// insertion; zero vectors are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
    source: EmbeddingSource,
}

fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingStore {
    pub fn new(dim: usize, source: EmbeddingSource) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
            source,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<(), RetrievalError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if self.vectors.contains_key(&id) {
            return Err(RetrievalError::DuplicateVector(id));
        }
        let unit = normalized(vector).ok_or_else(|| RetrievalError::ZeroVector(id.clone()))?;
        self.vectors.insert(id, unit);
        Ok(())
    }

    /// Embed every demonstration through `embedder`, optionally task-prefixed.
    pub fn from_embedder(
        embedder: &dyn TextEmbedder,
        demos: &[Demonstration],
        prefix: Option<&TaskSpec>,
    ) -> Result<Self, RetrievalError> {
        let texts: Vec<String> = demos
            .iter()
            .map(|d| match prefix {
                Some(task) => prefixed_text(task, &d.input),
                None => d.input.clone(),
            })
            .collect();
        let vectors = embedder.embed(&texts)?;
        if vectors.len() != demos.len() {
            return Err(RetrievalError::Endpoint(format!(
                "asked for {} vectors, got {}",
                demos.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        let mut store = EmbeddingStore::new(dim, EmbeddingSource::Endpoint);
        for (d, v) in demos.iter().zip(vectors) {
            store.insert(d.id.clone(), v)?;
        }
        Ok(store)
    }
}

#[derive(Deserialize)]
struct SidecarHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct SidecarRow {
    id: String,
    vec: Vec<f64>,
}

/// Read `{"dim": D}` followed by `{"id": ..., "vec": [...]}` lines.
pub fn load_sidecar(path: &Path) -> Result<EmbeddingStore, RetrievalError> {
    let text = fs::read_to_string(path).map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (line, header) = lines.next().ok_or(RetrievalError::SidecarMalformed {
        line: 1,
        reason: "missing {\"dim\": D} header".into(),
    })?;
    let header: SidecarHeader = serde_json::from_str(header).map_err(|e| RetrievalError::SidecarMalformed {
        line,
        reason: format!("bad header: {e}"),
    })?;
    if header.dim == 0 {
        return Err(RetrievalError::SidecarMalformed {
            line,
            reason: "dim must be positive".into(),
        });
    }
    let mut store = EmbeddingStore::new(header.dim, EmbeddingSource::File);
    for (line, raw) in lines {
        let row: SidecarRow = serde_json::from_str(raw).map_err(|e| RetrievalError::SidecarMalformed {
            line,
            reason: e.to_string(),
        })?;
        store.insert(row.id, row.vec).map_err(|e| match e {
            RetrievalError::DimensionMismatch { .. } | RetrievalError::ZeroVector(_) => {
                RetrievalError::SidecarMalformed {
                    line,
                    reason: e.to_string(),
                }
            }
            other => other,
        })?;
    }
    Ok(store)
}

pub fn write_sidecar(store: &EmbeddingStore, path: &Path) -> Result<(), RetrievalError> {
    let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "{}", serde_json::json!({ "dim": store.dim })).map_err(io)?;
    for (id, v) in store.iter() {
        let row = SidecarRow {
            id: id.to_string(),
            vec: v.to_vec(),
        };
        writeln!(f, "{}", serde_json::to_string(&row).expect("row serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Anything that maps texts to vectors, order-preserving.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError>;
}

/// POST `{"texts": [...]}` → `{"vectors": [[...]]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: JsonEndpoint,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, bearer: Option<String>) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, bearer, Duration::from_secs(120)),
            batch_size: 64,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self
                .endpoint
                .post(&EmbedRequest { texts: chunk })
                .map_err(|e| RetrievalError::Endpoint(e.to_string()))?;
            if resp.vectors.len() != chunk.len() {
                return Err(RetrievalError::Endpoint(format!(
                    "sent {} texts, got {} vectors",
                    chunk.len(),
                    resp.vectors.len()
                )));
            }
            out.extend(resp.vectors);
        }
        Ok(out)
    }
}

pub fn prefixed_text(task: &TaskSpec, text: &str) -> String {
    format!("{}: {}", task.name, text)
}

/// Embed a query; `task` switches on the multi-task prefix.
pub fn embed_query(
    embedder: &dyn TextEmbedder,
    text: &str,
    task: Option<&TaskSpec>,
) -> Result<Vec<f64>, RetrievalError> {
    let text = match task {
        Some(t) => prefixed_text(t, text),
        None => text.to_string(),
    };
    embedder
        .embed(&[text])?
        .pop()
        .ok_or_else(|| RetrievalError::Endpoint("empty embedding response".into()))
}

/// Multi-task relevance of `demo` for `query_text` under `task`: cosine
/// between the task-prefixed query embedding and the stored demo embedding.
pub fn score_multitask(
    demo: &Demonstration,
    query_text: &str,
    task: &TaskSpec,
    store: &EmbeddingStore,
    embedder: &dyn TextEmbedder,
) -> Result<f64, RetrievalError> {
    let stored = store
        .get(&demo.id)
        .ok_or_else(|| RetrievalError::MissingVector(demo.id.clone()))?;
    let query = embed_query(embedder, query_text, Some(task))?;
    if query.len() != store.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: store.dim(),
            got: query.len(),
        });
    }
    Ok(normalized(query).map_or(0.0, |q| dot(&q, stored)))
}

/// Pool demonstrations joined with their embeddings for exact scans.
#[derive(Debug, Clone)]
pub struct DenseIndex {
    kind: RetrieverKind,
    dim: usize,
    demos: Vec<Demonstration>,
    vectors: Vec<Vec<f64>>,
}

impl DenseIndex {
    /// Fails with `MissingVector` if any pool demo lacks an embedding.
    pub fn new(store: &EmbeddingStore, pool: &[Demonstration], kind: RetrieverKind) -> Result<Self, RetrievalError> {
        let vectors = pool
            .iter()
            .map(|d| {
                store
                    .get(&d.id)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| RetrievalError::MissingVector(d.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind,
            dim: store.dim(),
            demos: pool.to_vec(),
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> RetrieverKind {
        self.kind
    }

    pub fn scores(&self, query_vector: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        if query_vector.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: query_vector.len(),
            });
        }
        let q = normalized(query_vector.to_vec()).unwrap_or_else(|| vec![0.0; self.dim]);
        Ok(self.vectors.iter().map(|v| dot(&q, v)).collect())
    }

    pub fn rank(&self, query_vector: &[f64]) -> Result<Vec<ScoredDemo>, RetrievalError> {
        Ok(rank_by_score(&self.demos, self.scores(query_vector)?, self.kind))
    }
}

pub fn retrieve_dense(
    index: &DenseIndex,
    query_vector: &[f64],
    request: &RetrievalRequest,
    task: &TaskSpec,
) -> Result<Retrieved, RetrievalError> {
    finish(index.rank(query_vector)?, request, task)
}
