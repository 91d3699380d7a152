use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{
    apply_stop_rules, Backend, BackendError, FinishReason, GenerationRequest, GenerationResult,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    60.0
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Client for a model server. One blocking POST per generation call:
///
/// ```text
/// request:  {"context": [string...], "max_tokens": int, "stop": [string...]}
/// response: {"tokens": [string...], "finish": "stopped" | "budget" | "eos"}
/// ```
///
/// HTTP 413 is reported as [`BackendError::ContextOverflow`]. Stop markers
/// and `max_tokens` are re-applied locally to whatever the server returns.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let timeout = (config.timeout_secs.is_finite() && config.timeout_secs > 0.0)
            .then(|| Duration::from_secs_f64(config.timeout_secs));
        let agent = ureq::Agent::config_builder()
            .timeout_global(timeout)
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }
}

impl Backend for RemoteBackend {
    fn generate(
        &self,
        _step: usize,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        let response = self
            .agent
            .post(&self.config.url)
            .send_json(request)
            .map_err(transport_error)?;
        let status = response.status().as_u16();
        if status == 413 {
            return Err(BackendError::ContextOverflow {
                len: request.context.len(),
            });
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Transport {
                message: format!("{} returned HTTP {status}", self.config.url),
                retriable: status >= 500 || status == 429,
            });
        }
        let wire: GenerationResult = response
            .into_body()
            .read_json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let n = wire.tokens.len();
        let mut local = apply_stop_rules(wire.tokens, request.max_tokens, &request.stop_markers);
        if local.tokens.len() == n && local.finish == FinishReason::EndOfSequence {
            local.finish = wire.finish;
        }
        Ok(local)
    }
}

fn transport_error(e: ureq::Error) -> BackendError {
    let retriable = matches!(
        e,
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed
    );
    BackendError::Transport {
        message: e.to_string(),
        retriable,
    }
}
