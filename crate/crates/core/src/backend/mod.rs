//! Generation backends.
//!
//! The orchestrator talks to a model only through [`Backend::generate`]. A
//! [`ScriptedBackend`] replays authored token lists keyed by the ordinal of
//! the generation call inside a session; a [`RemoteBackend`] forwards each
//! request to an HTTP server speaking a small JSON protocol.

mod remote;
mod scripted;

pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{scripted_lookup, ScriptEntry, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub context: Vec<String>,
    pub max_tokens: usize,
    #[serde(rename = "stop")]
    pub stop_markers: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    #[serde(rename = "stopped")]
    Stopped,
    #[serde(rename = "budget")]
    BudgetExhausted,
    #[serde(rename = "eos")]
    EndOfSequence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub tokens: Vec<String>,
    pub finish: FinishReason,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {message}")]
    Transport { message: String, retriable: bool },
    #[error("context of {len} tokens exceeds the model limit")]
    ContextOverflow { len: usize },
    #[error("malformed backend response: {0}")]
    Protocol(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport {
                retriable: true,
                ..
            }
        )
    }
}

/// A token generator. `step` is the 1-based ordinal of this call within the
/// calling session; stateless backends may ignore it.
///
/// Implementations must be shareable across sessions running on different
/// threads. Within one session calls are strictly sequential.
pub trait Backend: Send + Sync {
    fn generate(
        &self,
        step: usize,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(
        &self,
        step: usize,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        (**self).generate(step, request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(
        &self,
        step: usize,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        (**self).generate(step, request)
    }
}

/// Applies the shared stop rules to a candidate continuation: stop right
/// after the first stop marker, otherwise cut at `max_tokens`.
///
/// `max_tokens == 0` always yields an empty `BudgetExhausted` result.
pub fn apply_stop_rules(
    candidate: impl IntoIterator<Item = String>,
    max_tokens: usize,
    stop_markers: &[String],
) -> GenerationResult {
    if max_tokens == 0 {
        return GenerationResult {
            tokens: Vec::new(),
            finish: FinishReason::BudgetExhausted,
        };
    }
    let mut tokens = Vec::new();
    for tok in candidate {
        if tokens.len() == max_tokens {
            return GenerationResult {
                tokens,
                finish: FinishReason::BudgetExhausted,
            };
        }
        let stop = stop_markers.contains(&tok);
        tokens.push(tok);
        if stop {
            return GenerationResult {
                tokens,
                finish: FinishReason::Stopped,
            };
        }
    }
    GenerationResult {
        tokens,
        finish: FinishReason::EndOfSequence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn stop_marker_is_kept_and_ends_output() {
        let r = apply_stop_rules(s(&["a", "</think>", "b"]), 10, &s(&["</think>"]));
        assert_eq!(r.tokens, s(&["a", "</think>"]));
        assert_eq!(r.finish, FinishReason::Stopped);
    }

    #[test]
    fn stop_marker_exactly_at_budget_counts_as_stop() {
        let r = apply_stop_rules(s(&["a", "</think>"]), 2, &s(&["</think>"]));
        assert_eq!(r.finish, FinishReason::Stopped);
        let r = apply_stop_rules(s(&["a", "b", "</think>"]), 2, &s(&["</think>"]));
        assert_eq!(r.tokens, s(&["a", "b"]));
        assert_eq!(r.finish, FinishReason::BudgetExhausted);
    }

    #[test]
    fn zero_budget_and_eos() {
        let r = apply_stop_rules(s(&["a"]), 0, &[]);
        assert!(r.tokens.is_empty());
        assert_eq!(r.finish, FinishReason::BudgetExhausted);
        let r = apply_stop_rules(Vec::new(), 0, &[]);
        assert_eq!(r.finish, FinishReason::BudgetExhausted);
        let r = apply_stop_rules(s(&["a"]), 5, &[]);
        assert_eq!(r.finish, FinishReason::EndOfSequence);
    }

    #[test]
    fn wire_names() {
        let json = serde_json::to_string(&GenerationRequest {
            context: s(&["hi", "[EOA]"]),
            max_tokens: 3,
            stop_markers: s(&["</think>"]),
        })
        .unwrap();
        assert_eq!(
            json,
            r#"{"context":["hi","[EOA]"],"max_tokens":3,"stop":["</think>"]}"#
        );
        let r: GenerationResult =
            serde_json::from_str(r#"{"tokens":["x"],"finish":"budget"}"#).unwrap();
        assert_eq!(r.finish, FinishReason::BudgetExhausted);
    }
}
