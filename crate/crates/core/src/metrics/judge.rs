//! Pluggable judges for interruption validity and answer quality.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scenario_io::Scenario;
use crate::tokens::{detokenize, is_marker};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge transport error: {0}")]
    Transport(String),
    #[error("malformed judge reply: {0}")]
    Protocol(String),
}

/// Decides whether an interruption was warranted, given everything the user
/// said up to the cut (including the overlapping chunk) and the response.
pub trait InterruptJudge: Send + Sync {
    fn is_valid(&self, user_prefix: &[String], response: &[String]) -> Result<bool, JudgeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityScore {
    pub correctness: u8,
    pub completeness: u8,
}

/// Scores a final response in `{0, 1, 2}` on two axes.
pub trait QualityJudge: Send + Sync {
    fn score(&self, scenario: &Scenario, response: &[String]) -> Result<QualityScore, JudgeError>;
}

/// Accepts an interruption when the response is non-empty and refers back to
/// something the user said (shares at least one non-marker word with the
/// prefix, case-insensitively).
#[derive(Debug, Clone, Copy, Default)]
pub struct GroundedResponseJudge;

fn norm(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

impl InterruptJudge for GroundedResponseJudge {
    fn is_valid(&self, user_prefix: &[String], response: &[String]) -> Result<bool, JudgeError> {
        let said: std::collections::BTreeSet<String> = user_prefix
            .iter()
            .filter(|t| !is_marker(t))
            .map(|t| norm(t))
            .filter(|t| !t.is_empty())
            .collect();
        Ok(response
            .iter()
            .filter(|t| !is_marker(t))
            .any(|t| said.contains(&norm(t))))
    }
}

/// Checks that the values designated by each ground-truth call's
/// `answer_key` appear verbatim in the response: 2 if all do, 1 if some do,
/// 0 otherwise. Both axes get the same score.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnswerKeyJudge;

/// The designated value of a call's response payload, as it should appear
/// in a final answer.
pub fn answer_value(payload: &str, key: &str) -> Option<String> {
    let parsed: Value = serde_json::from_str(payload).ok()?;
    match parsed.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

impl QualityJudge for AnswerKeyJudge {
    fn score(&self, scenario: &Scenario, response: &[String]) -> Result<QualityScore, JudgeError> {
        let text = detokenize(response);
        let mut total = 0;
        let mut found = 0;
        for call in &scenario.ground_truth_calls {
            let Some(key) = &call.answer_key else {
                continue;
            };
            total += 1;
            if answer_value(&call.response, key).is_some_and(|v| text.contains(&v)) {
                found += 1;
            }
        }
        let s = if found == total {
            2
        } else if found > 0 {
            1
        } else {
            0
        };
        Ok(QualityScore {
            correctness: s,
            completeness: s,
        })
    }
}

/// Forwards judgements to an HTTP service:
///
/// ```text
/// {"kind":"interrupt","prefix":[..],"response":[..]} -> {"valid": bool}
/// {"kind":"quality","scenario_id":"..","transcript":"..","response":[..]}
///     -> {"correctness": 0..2, "completeness": 0..2}
/// ```
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    url: String,
    agent: ureq::Agent,
}

impl RemoteJudge {
    pub fn new(url: impl Into<String>, timeout_secs: f64) -> Self {
        let timeout = (timeout_secs.is_finite() && timeout_secs > 0.0)
            .then(|| Duration::from_secs_f64(timeout_secs));
        let agent = ureq::Agent::config_builder()
            .timeout_global(timeout)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
        }
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, body: &Value) -> Result<T, JudgeError> {
        self.agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| JudgeError::Transport(e.to_string()))?
            .into_body()
            .read_json()
            .map_err(|e| JudgeError::Protocol(e.to_string()))
    }
}

impl InterruptJudge for RemoteJudge {
    fn is_valid(&self, user_prefix: &[String], response: &[String]) -> Result<bool, JudgeError> {
        #[derive(Deserialize)]
        struct Reply {
            valid: bool,
        }
        let body =
            serde_json::json!({"kind": "interrupt", "prefix": user_prefix, "response": response});
        Ok(self.post::<Reply>(&body)?.valid)
    }
}

impl QualityJudge for RemoteJudge {
    fn score(&self, scenario: &Scenario, response: &[String]) -> Result<QualityScore, JudgeError> {
        let transcript: Vec<&str> = scenario.words.iter().map(|w| w.text.as_str()).collect();
        let body = serde_json::json!({
            "kind": "quality",
            "scenario_id": scenario.id,
            "transcript": transcript.join(" "),
            "response": response,
        });
        let s: QualityScore = self.post(&body)?;
        if s.correctness > 2 || s.completeness > 2 {
            return Err(JudgeError::Protocol(format!(
                "scores must be in 0..=2, got {} and {}",
                s.correctness, s.completeness
            )));
        }
        Ok(s)
    }
}
