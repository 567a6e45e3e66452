use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::model::{HttpModelConfig, MockModelConfig};
use crate::prompt::TokenBudget;
use crate::refract::RefractOptions;
use crate::retrieval::RetrieverKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSpec {
    pub kind: RetrieverKind,
    #[serde(default)]
    pub balance: bool,
}

impl RetrieverSpec {
    pub fn new(kind: RetrieverKind, balance: bool) -> Self {
        Self { kind, balance }
    }

    /// Row name in reports, e.g. `tfidf` or `tfidf-balanced`.
    pub fn label(&self) -> String {
        if self.balance {
            format!("{}-balanced", self.kind)
        } else {
            self.kind.to_string()
        }
    }
}

fn mock_id() -> String {
    "mock".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ModelSpec {
    Mock {
        #[serde(default = "mock_id")]
        model_id: String,
        #[serde(flatten)]
        config: MockModelConfig,
    },
    Http(HttpSpec),
}

/// HTTP backend settings. A missing endpoint falls back to `MODEL_ENDPOINT`;
/// the bearer token only ever comes from `MODEL_API_KEY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backoff_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl HttpSpec {
    pub fn resolve(&self, max_inflight: usize) -> Result<HttpModelConfig, HarnessError> {
        let endpoint = match &self.endpoint {
            Some(e) => e.clone(),
            None => std::env::var("MODEL_ENDPOINT")
                .map_err(|_| HarnessError::Config("model endpoint not set in config or MODEL_ENDPOINT".into()))?,
        };
        let mut cfg = HttpModelConfig::new(endpoint, self.model_id.clone());
        cfg.api_key = std::env::var("MODEL_API_KEY").ok();
        cfg.max_inflight = max_inflight;
        if let Some(v) = self.retry_max {
            cfg.retry_max = v;
        }
        if let Some(v) = self.backoff_ms {
            cfg.backoff_ms = v;
        }
        if let Some(v) = self.timeout_secs {
            cfg.timeout_secs = v;
        }
        Ok(cfg)
    }
}

/// Sidecar files for the dense and multi-task retrievers, plus an optional
/// endpoint for embedding queries the sidecars do not cover.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multitask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

fn default_max_inflight() -> usize {
    4
}

fn default_max_output_tokens() -> usize {
    64
}

/// One experiment: a k-sweep over retrievers for a single task and model.
/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: PathBuf,
    pub pool: PathBuf,
    pub test: PathBuf,
    pub retrievers: Vec<RetrieverSpec>,
    pub k_values: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refract: Option<RefractOptions>,
    pub model: ModelSpec,
    pub budget: TokenBudget,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingSpec>,
    #[serde(default)]
    pub partial_ok: bool,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.retrievers.is_empty() {
            return bad("at least one retriever is required");
        }
        if self.k_values.is_empty() {
            return bad("k_values is empty");
        }
        if self.k_values[0] == 0 {
            return bad("k values must be positive");
        }
        if self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("k_values must be strictly increasing");
        }
        if self.max_inflight == 0 {
            return bad("max_inflight must be positive");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        self.budget.validate()?;
        if let Some(r) = &self.refract {
            r.validate()?;
        }
        let emb = self.embeddings.clone().unwrap_or_default();
        for spec in &self.retrievers {
            let covered = match spec.kind {
                RetrieverKind::Dense => emb.dense.is_some(),
                RetrieverKind::Multitask => emb.multitask.is_some(),
                _ => true,
            };
            if !covered {
                return Err(HarnessError::Config(format!(
                    "retriever {} needs an embeddings sidecar",
                    spec.kind
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the config as written.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
