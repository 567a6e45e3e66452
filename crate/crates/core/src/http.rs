//! Blocking JSON-over-POST client shared by the model, embedding and token
//! counter endpoints.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum HttpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl HttpError {
    /// Worth retrying: network trouble, throttling, server-side failures.
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status(code) => *code == 429 || *code >= 500,
            HttpError::Malformed(_) => false,
        }
    }
}

#[derive(Clone)]
pub struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    bearer: Option<String>,
}

impl std::fmt::Debug for JsonEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonEndpoint")
            .field("url", &self.url)
            .finish_non_exhaustive()
    }
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, bearer: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: url.into(),
            bearer,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, body: &B) -> Result<T, HttpError> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(HttpError::Status(status));
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| HttpError::Malformed(e.to_string()))
    }
}
