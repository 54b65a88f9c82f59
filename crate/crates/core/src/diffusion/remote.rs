//! HTTP client for an out-of-process denoiser.
//!
//! Wire protocol: `POST {endpoint}/v1/denoise` with
//! `{"shape": [..], "x_t": [..], "t": int, "prompt": str|null, "embedding": [..]|null}`,
//! answered by `{"shape": [..], "epsilon": [..]}`. Arrays are row-major doubles.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Conditioning, Denoiser, DiffusionError};
use crate::tensor::Tensor;

/// Number of HTTP requests issued by every remote denoiser in this process.
static REQUESTS_SENT: AtomicUsize = AtomicUsize::new(0);

pub fn requests_sent() -> usize {
    REQUESTS_SENT.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRequest {
    pub shape: Vec<usize>,
    pub x_t: Vec<f64>,
    pub t: usize,
    pub prompt: Option<String>,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseResponse {
    pub shape: Vec<usize>,
    pub epsilon: Vec<f64>,
}

impl DenoiseRequest {
    pub fn new(x_t: &Tensor, t: usize, cond: &Conditioning) -> Self {
        Self {
            shape: x_t.shape().to_vec(),
            x_t: x_t.data().to_vec(),
            t,
            prompt: cond.prompt().map(str::to_owned),
            embedding: if cond.is_null() {
                None
            } else {
                Some(cond.embedding().to_vec())
            },
        }
    }
}

pub struct RemoteDenoiser {
    url: String,
    agent: ureq::Agent,
    retries: usize,
}

/// Client for the denoiser served at `endpoint` (scheme, host and port).
pub fn remote_denoiser(endpoint: &str) -> RemoteDenoiser {
    RemoteDenoiser::new(endpoint, 2)
}

impl RemoteDenoiser {
    /// `retries` extra attempts are made after a transport failure.
    pub fn new(endpoint: &str, retries: usize) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(120))
            .build();
        Self {
            url: format!("{}/v1/denoise", endpoint.trim_end_matches('/')),
            agent,
            retries,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn send_once(&self, body: &DenoiseRequest) -> Result<DenoiseResponse, DiffusionError> {
        REQUESTS_SENT.fetch_add(1, Ordering::SeqCst);
        let response = match self.agent.post(&self.url).send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(DiffusionError::Transport(format!("HTTP {code}: {text}")));
            }
            Err(e) => return Err(DiffusionError::Transport(e.to_string())),
        };
        let text = response
            .into_string()
            .map_err(|e| DiffusionError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| DiffusionError::MalformedResponse(e.to_string()))
    }
}

impl Denoiser for RemoteDenoiser {
    fn predict_noise(
        &self,
        x_t: &Tensor,
        t: usize,
        cond: &Conditioning,
    ) -> Result<Tensor, DiffusionError> {
        let body = DenoiseRequest::new(x_t, t, cond);
        let mut attempt = 0;
        let response = loop {
            match self.send_once(&body) {
                Err(DiffusionError::Transport(msg)) if attempt < self.retries => {
                    log::warn!("denoiser request failed (attempt {}): {msg}", attempt + 1);
                    attempt += 1;
                    std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                }
                other => break other?,
            }
        };
        if response.shape != x_t.shape() {
            return Err(DiffusionError::DenoiserShape {
                expected: x_t.shape().to_vec(),
                actual: response.shape,
            });
        }
        Tensor::new(response.shape, response.epsilon)
            .map_err(|e| DiffusionError::MalformedResponse(e.to_string()))
    }
}
