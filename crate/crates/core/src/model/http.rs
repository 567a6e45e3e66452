use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GenerationRequest, ModelClient, ModelError};
use crate::http::{HttpError, JsonEndpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpModelConfig {
    pub endpoint: String,
    pub model_id: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_retry_max")]
    pub retry_max: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_inflight")]
    pub max_inflight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_retry_max() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_inflight() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    300
}

impl HttpModelConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key: None,
            retry_max: default_retry_max(),
            backoff_ms: default_backoff_ms(),
            max_inflight: default_max_inflight(),
            timeout_secs: default_timeout_secs(),
        }
    }

    /// Endpoint and key from `MODEL_ENDPOINT` / `MODEL_API_KEY`.
    pub fn from_env(model_id: impl Into<String>) -> Option<Self> {
        let endpoint = std::env::var("MODEL_ENDPOINT").ok()?;
        let mut cfg = Self::new(endpoint, model_id);
        cfg.api_key = std::env::var("MODEL_API_KEY").ok();
        Some(cfg)
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// Backend speaking `{"model", "prompt", "max_tokens", "temperature",
/// "stop"}` → `{"text"}` over POST with an optional bearer token.
pub struct HttpModelClient {
    config: HttpModelConfig,
    endpoint: JsonEndpoint,
    inflight: Semaphore,
}

impl HttpModelClient {
    pub fn new(config: HttpModelConfig) -> Self {
        let endpoint = JsonEndpoint::new(
            config.endpoint.clone(),
            config.api_key.clone(),
            Duration::from_secs(config.timeout_secs),
        );
        let inflight = Semaphore::new(config.max_inflight);
        Self {
            config,
            endpoint,
            inflight,
        }
    }
}

impl ModelClient for HttpModelClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelError> {
        request.validate()?;
        let _permit = self.inflight.acquire();
        let body = WireRequest {
            model: &self.config.model_id,
            prompt: &request.prompt,
            max_tokens: request.max_output_tokens,
            temperature: request.temperature,
            stop: &request.stop,
        };
        let mut attempt = 0;
        loop {
            match self.endpoint.post::<_, WireResponse>(&body) {
                Ok(resp) => return Ok(resp.text.trim_end().to_string()),
                Err(HttpError::Malformed(m)) => return Err(ModelError::ResponseMalformed(m)),
                Err(e) if e.is_transient() && attempt < self.config.retry_max => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << attempt.min(16));
                    log::warn!("{}: {e}; retrying in {wait} ms", self.endpoint.url());
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(ModelError::ModelUnavailable(e.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::test_server;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn client(url: &str, retry_max: u32) -> HttpModelClient {
        let mut cfg = HttpModelConfig::new(url, "test-model");
        cfg.retry_max = retry_max;
        cfg.backoff_ms = 1;
        cfg.api_key = Some("sekrit".into());
        HttpModelClient::new(cfg)
    }

    #[test]
    fn wire_format_and_trim() {
        let server = test_server::spawn(|_| (200, r#"{"text": "positive \n\n"}"#.into()));
        let mut req = GenerationRequest::new("Input: great\nOutput:", 16);
        req.stop = vec!["\n".into()];
        let out = client(&server.url, 0).generate(&req).unwrap();
        assert_eq!(out, "positive");
        let seen = server.seen.lock().unwrap();
        let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["prompt"], "Input: great\nOutput:");
        assert_eq!(body["max_tokens"], 16);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["stop"], serde_json::json!(["\n"]));
        assert!(seen[0]
            .headers
            .iter()
            .any(|h| h == "authorization: Bearer sekrit" || h == "Authorization: Bearer sekrit"));
    }

    #[test]
    fn retries_transient_failures() {
        let hits = Arc::new(AtomicUsize::new(0));
        let h = Arc::clone(&hits);
        let server = test_server::spawn(move |_| {
            if h.fetch_add(1, Ordering::SeqCst) < 2 {
                (503, "{}".into())
            } else {
                (200, r#"{"text": "ok"}"#.into())
            }
        });
        assert_eq!(
            client(&server.url, 3)
                .generate(&GenerationRequest::new("p", 4))
                .unwrap(),
            "ok"
        );
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retry_max() {
        let server = test_server::spawn(|_| (500, "{}".into()));
        let err = client(&server.url, 2)
            .generate(&GenerationRequest::new("p", 4))
            .unwrap_err();
        assert!(matches!(err, ModelError::ModelUnavailable(_)));
        assert_eq!(server.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = test_server::spawn(|_| (400, "{}".into()));
        let err = client(&server.url, 5)
            .generate(&GenerationRequest::new("p", 4))
            .unwrap_err();
        assert!(matches!(err, ModelError::ModelUnavailable(_)));
        assert_eq!(server.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn malformed_body() {
        let server = test_server::spawn(|_| (200, r#"{"txt": 1}"#.into()));
        let err = client(&server.url, 3)
            .generate(&GenerationRequest::new("p", 4))
            .unwrap_err();
        assert!(matches!(err, ModelError::ResponseMalformed(_)));
    }

    #[test]
    fn unreachable_endpoint() {
        let err = client("http://127.0.0.1:9/", 1)
            .generate(&GenerationRequest::new("p", 4))
            .unwrap_err();
        assert!(matches!(err, ModelError::ModelUnavailable(_)));
    }
}
