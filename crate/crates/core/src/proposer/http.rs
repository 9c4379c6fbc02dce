//! Blocking client for an OpenAI-compatible `/v1/completions` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    /// Full completion URL, e.g. `http://localhost:8000/v1/completions`.
    pub url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:8000/v1/completions".into(),
            model: "llama-2-70b".into(),
            api_key: None,
            timeout_secs: 120,
            max_retries: 3,
            retry_backoff_ms: 250,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    #[serde(flatten)]
    request: &'a CompletionRequest,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    config: HttpBackendConfig,
    logprobs: bool,
}

impl HttpBackend {
    /// Creates the client without contacting the server.
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent, config, logprobs: true }
    }

    /// Creates the client and sends one probe request to confirm log-probability support.
    pub fn connect(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let mut backend = Self::new(config);
        let probe = CompletionRequest {
            prompt: "Answer YES or NO. Is water wet?\nAnswer:".into(),
            n: 1,
            temperature: 0.0,
            max_tokens: 1,
            logprobs: 2,
            stop: Vec::new(),
            seed: None,
        };
        let response = backend.send(&probe)?;
        backend.logprobs = response
            .choices
            .first()
            .and_then(|c| c.logprobs.as_ref())
            .is_some_and(|lp| !lp.token_logprobs.is_empty() && !lp.top_logprobs.is_empty());
        if !backend.logprobs {
            return Err(BackendError::Capability(format!(
                "{} returned no token log-probabilities",
                backend.config.url
            )));
        }
        Ok(backend)
    }

    fn send_once(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut call = self.agent.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(WireRequest { model: &self.config.model, request })
            .map_err(|e| BackendError::Transport { message: e.to_string(), retriable: true })?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendError::Transport { message: format!("HTTP {status}"), retriable: true });
        }
        if status >= 400 {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Transport { message: format!("HTTP {status}: {body}"), retriable: false });
        }
        response
            .body_mut()
            .read_json::<CompletionResponse>()
            .map_err(|e| BackendError::Protocol(e.to_string()))
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let mut attempt = 0;
        loop {
            match self.send_once(request) {
                Err(BackendError::Transport { retriable: true, message }) if attempt < self.config.max_retries => {
                    let wait = self.config.retry_backoff_ms << attempt;
                    log::warn!("backend request failed ({message}); retrying in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.send(request)
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }
}
