//! Text generation backends and the persistent response cache.
//!
//! Every backend implements [`ModelClient`]. [`CachedModel`] puts the
//! content-addressed [`ResponseCache`] in front of a client so repeated runs
//! with the same model, template and prompt never reach the backend.

mod cache;
mod http;
mod mock;
mod probe;

pub use cache::{cache_key, CacheEntry, CacheError, ResponseCache};
pub use http::{HttpModelClient, HttpModelConfig};
pub use mock::{MockMode, MockModel, MockModelConfig};
pub use probe::MockProbe;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_output_tokens: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, max_output_tokens: usize) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_output_tokens == 0 {
            return Err(ModelError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ModelError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model unavailable: {0}")]
    ModelUnavailable(String),
    #[error("malformed model response: {0}")]
    ResponseMalformed(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

pub trait ModelClient: Send + Sync {
    fn model_id(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelError>;

    /// Whether prompts should carry a [`MockProbe`] sentinel. Only offline
    /// mocks ask for one.
    fn wants_probe(&self) -> bool {
        false
    }
}

/// A client behind the response cache. Counts the calls that actually reach
/// the backend.
pub struct CachedModel<'a> {
    client: &'a dyn ModelClient,
    cache: Option<&'a ResponseCache>,
    backend_calls: AtomicUsize,
}

impl<'a> CachedModel<'a> {
    pub fn new(client: &'a dyn ModelClient, cache: Option<&'a ResponseCache>) -> Self {
        Self {
            client,
            cache,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn model_id(&self) -> &str {
        self.client.model_id()
    }

    pub fn wants_probe(&self) -> bool {
        self.client.wants_probe()
    }

    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn generate(&self, template_hash: &str, request: &GenerationRequest) -> Result<String, ModelError> {
        request.validate()?;
        let key = cache_key(self.client.model_id(), template_hash, &request.prompt);
        if let Some(cache) = self.cache {
            if let Some(hit) = cache.get(self.client.model_id(), &key)? {
                return Ok(hit);
            }
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        let text = self.client.generate(request)?;
        if let Some(cache) = self.cache {
            cache.put(self.client.model_id(), &key, &text)?;
        }
        Ok(text)
    }
}

/// `generate` on a client without a cache.
pub fn generate(client: &dyn ModelClient, request: &GenerationRequest) -> Result<String, ModelError> {
    request.validate()?;
    client.generate(request)
}
