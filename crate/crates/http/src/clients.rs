//! Blocking clients for the external model backends.
//!
//! Grounding: `POST {base}/ground` with `{image_id, phrase}`, answered by
//! `{max_activation, centroid_x_fraction}`.
//! Generation: `POST {base}/v1/generate` with `{system, prompt, temperature,
//! max_tokens}`, answered by `{text}`.
//!
//! These clients own a private runtime inside `reqwest::blocking`; do not
//! call them from async code.

use std::time::Duration;

use cxr_core::error::BackendError;
use cxr_core::generation::{EngineConfig, GenerateRequest, GenerateResponse, GenerationBackend};
use cxr_core::grounding::{GroundingBackend, GroundingResponse};
use cxr_core::{Error, Result};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundRequest {
    pub image_id: String,
    pub phrase: String,
}

fn map_transport(e: reqwest::Error, timeout: Duration) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(timeout.as_millis() as u64)
    } else if e.is_connect() || e.is_request() {
        BackendError::Unreachable(e.to_string())
    } else if e.is_decode() {
        BackendError::Protocol(e.to_string())
    } else {
        BackendError::Transient(e.to_string())
    }
}

fn map_status(status: StatusCode, body: String) -> BackendError {
    let msg = format!("{status}: {}", body.trim());
    match status {
        StatusCode::NOT_FOUND => BackendError::NotFound(msg),
        StatusCode::REQUEST_TIMEOUT | StatusCode::GATEWAY_TIMEOUT => BackendError::Transient(msg),
        StatusCode::TOO_MANY_REQUESTS | StatusCode::BAD_GATEWAY | StatusCode::SERVICE_UNAVAILABLE => {
            BackendError::Transient(msg)
        }
        s if s.is_server_error() => BackendError::Transient(msg),
        _ => BackendError::Refused(msg),
    }
}

fn check(resp: Response) -> Result<Response, BackendError> {
    let status = resp.status();
    if status.is_success() {
        Ok(resp)
    } else {
        Err(map_status(status, resp.text().unwrap_or_default()))
    }
}

fn client(timeout: Duration) -> Result<Client> {
    Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build HTTP client: {e}")))
}

pub struct HttpGrounder {
    client: Client,
    url: String,
    timeout: Duration,
}

impl HttpGrounder {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            client: client(timeout)?,
            url: format!("{}/ground", base_url.trim_end_matches('/')),
            timeout,
        })
    }
}

impl GroundingBackend for HttpGrounder {
    fn ground(&self, image_id: &str, phrase: &str) -> Result<GroundingResponse, BackendError> {
        let body = GroundRequest {
            image_id: image_id.to_string(),
            phrase: phrase.to_string(),
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| map_transport(e, self.timeout))?;
        let raw: GroundingResponse = check(resp)?.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        GroundingResponse::new(raw.max_activation, raw.centroid_x_fraction)
    }
}

pub struct HttpGenerator {
    client: Client,
    url: String,
    api_key: Option<String>,
    timeout: Duration,
}

impl HttpGenerator {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        Ok(Self {
            client: client(timeout)?,
            url: format!("{}/v1/generate", base_url.trim_end_matches('/')),
            api_key,
            timeout,
        })
    }

    /// Uses the engine's endpoint and reads the credential from the
    /// environment variable the engine names.
    pub fn for_engine(engine: &EngineConfig, timeout: Duration) -> Result<Self> {
        let base = engine
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("engine {:?} has no endpoint", engine.engine_id)))?;
        let api_key = match &engine.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::invalid(format!(
                    "engine {:?} needs environment variable {var}",
                    engine.engine_id
                ))
            })?),
            None => None,
        };
        Self::new(base, api_key, timeout)
    }
}

impl GenerationBackend for HttpGenerator {
    fn complete(&self, request: &GenerateRequest) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.url).json(request);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| map_transport(e, self.timeout))?;
        let body: GenerateResponse = check(resp)?.json().map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(body.text)
    }
}
