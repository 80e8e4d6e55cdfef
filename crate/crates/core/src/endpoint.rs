//! Clients for remote text-generation services.
//!
//! Two wire shapes are spoken, both JSON over HTTP POST:
//!
//! * generation: `{"prompt": ...}` answered by `{"texts": [...]}`
//! * prediction: `{"id": ..., "prompt": ...}` answered by `{"id": ..., "text": ...}`,
//!   or arrays of both when batching.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EndpointError {
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
}

impl EndpointError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, EndpointError::Timeout)
    }
}

/// Produces candidate texts for a prompt.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<Vec<String>, EndpointError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: String,
    pub text: String,
}

/// Runs model inference for a batch of prompts.
pub trait PredictionService: Send + Sync {
    /// Largest batch the service accepts in one request.
    fn max_batch(&self) -> usize {
        1
    }

    fn predict(&self, batch: &[PredictRequest]) -> Result<Vec<PredictResponse>, EndpointError>;
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    texts: Vec<String>,
}

/// Blocking HTTP client for both wire shapes.
pub struct HttpEndpoint {
    agent: ureq::Agent,
    address: String,
    auth_token: Option<String>,
    batch_size: usize,
}

impl HttpEndpoint {
    pub fn new(address: impl Into<String>, auth_token: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEndpoint {
            agent,
            address: address.into(),
            auth_token,
            batch_size: 1,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn post<B: Serialize, R: serde::de::DeserializeOwned>(&self, body: &B) -> Result<R, EndpointError> {
        let mut req = self.agent.post(&self.address);
        if let Some(token) = &self.auth_token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| match map_ureq(e) {
                EndpointError::Unavailable(m) => EndpointError::BadResponse(m),
                other => other,
            })
    }
}

fn map_ureq(e: ureq::Error) -> EndpointError {
    match e {
        ureq::Error::Timeout(_) => EndpointError::Timeout,
        ureq::Error::StatusCode(code) => EndpointError::Status(code),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => EndpointError::Timeout,
        ureq::Error::Json(j) => EndpointError::BadResponse(j.to_string()),
        other => EndpointError::Unavailable(other.to_string()),
    }
}

impl TextGenerator for HttpEndpoint {
    fn generate(&self, prompt: &str) -> Result<Vec<String>, EndpointError> {
        let resp: GenerateResponse = self.post(&GenerateRequest { prompt })?;
        Ok(resp.texts)
    }
}

impl PredictionService for HttpEndpoint {
    fn max_batch(&self) -> usize {
        self.batch_size
    }

    fn predict(&self, batch: &[PredictRequest]) -> Result<Vec<PredictResponse>, EndpointError> {
        match batch {
            [] => Ok(Vec::new()),
            [one] if self.batch_size == 1 => Ok(vec![self.post(one)?]),
            many => self.post(&many),
        }
    }
}
