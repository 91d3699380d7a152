use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::Value;

use super::{GroundTruthCall, MatchOutcome, Phase, ToolCall, ToolSpec, GENERIC_ERROR};
use crate::backend::{Backend, GenerationRequest};
use crate::tokens::tokenize;

/// Decides whether a model call is the same call as a ground-truth call.
pub trait CallMatcher: Send + Sync {
    fn matches(&self, call: &ToolCall, candidate: &GroundTruthCall, specs: &[ToolSpec]) -> bool;
}

/// Argument value in comparison form.
#[derive(Debug, Clone, PartialEq)]
pub enum CanonicalValue {
    Null,
    Bool(bool),
    Number(f64),
    Str(String),
    Array(Vec<CanonicalValue>),
    Object(BTreeMap<String, CanonicalValue>),
}

/// Trims strings and keys, normalizes numbers, and, when `numeric` is set,
/// reads numeric strings (`"2"`, `" 2.0 "`) as numbers.
pub fn canonicalize(value: &Value, numeric: bool) -> CanonicalValue {
    match value {
        Value::Null => CanonicalValue::Null,
        Value::Bool(b) => CanonicalValue::Bool(*b),
        Value::Number(n) => CanonicalValue::Number(n.as_f64().unwrap_or(f64::NAN)),
        Value::String(s) => {
            let t = s.trim();
            match t.parse::<f64>() {
                Ok(x) if numeric && x.is_finite() => CanonicalValue::Number(x),
                _ => CanonicalValue::Str(t.to_string()),
            }
        }
        Value::Array(items) => {
            CanonicalValue::Array(items.iter().map(|v| canonicalize(v, numeric)).collect())
        }
        Value::Object(map) => CanonicalValue::Object(
            map.iter()
                .map(|(k, v)| (k.trim().to_string(), canonicalize(v, numeric)))
                .collect(),
        ),
    }
}

fn canonical_args(
    name: &str,
    args: &BTreeMap<String, Value>,
    specs: &[ToolSpec],
) -> BTreeMap<String, CanonicalValue> {
    let spec = specs.iter().find(|s| s.name.trim() == name);
    args.iter()
        .map(|(k, v)| {
            let key = k.trim();
            let numeric = spec
                .and_then(|s| s.parameters.get(key))
                .is_some_and(|p| p.is_numeric());
            (key.to_string(), canonicalize(v, numeric))
        })
        .collect()
}

/// Equal names and equal canonical argument maps.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructuralMatcher;

impl CallMatcher for StructuralMatcher {
    fn matches(&self, call: &ToolCall, candidate: &GroundTruthCall, specs: &[ToolSpec]) -> bool {
        let name = call.name.trim();
        name == candidate.name.trim()
            && canonical_args(name, &call.arguments, specs)
                == canonical_args(name, &candidate.arguments, specs)
    }
}

/// Delegates the match decision to a model reached through a [`Backend`].
/// The judge sees both calls as JSON and must answer starting with "yes".
/// Backend failures count as "no match" and are tallied in
/// [`JudgeMatcher::failures`].
pub struct JudgeMatcher<B> {
    backend: B,
    failures: AtomicUsize,
}

impl<B: Backend> JudgeMatcher<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            failures: AtomicUsize::new(0),
        }
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::Relaxed)
    }
}

impl<B: Backend> CallMatcher for JudgeMatcher<B> {
    fn matches(&self, call: &ToolCall, candidate: &GroundTruthCall, _specs: &[ToolSpec]) -> bool {
        let prompt = format!(
            "Decide whether the model call matches the reference call. \
             Model call: {} {} Reference call: {} {} Answer yes or no.",
            call.name,
            Value::Object(call.arguments.clone().into_iter().collect()),
            candidate.name,
            Value::Object(candidate.arguments.clone().into_iter().collect()),
        );
        let request = GenerationRequest {
            context: tokenize(&prompt),
            max_tokens: 4,
            stop_markers: Vec::new(),
        };
        match self.backend.generate(1, &request) {
            Ok(r) => r
                .tokens
                .first()
                .is_some_and(|t| t.to_ascii_lowercase().starts_with("yes")),
            Err(_) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }
}

/// Ground truth and consumption state for one session.
#[derive(Clone)]
pub struct ToolEnvironment {
    pub specs: Vec<ToolSpec>,
    pub ground_truth: Vec<GroundTruthCall>,
    consumed: BTreeSet<u32>,
    matcher: Arc<dyn CallMatcher>,
}

impl fmt::Debug for ToolEnvironment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolEnvironment")
            .field("specs", &self.specs.len())
            .field("ground_truth", &self.ground_truth.len())
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl Default for ToolEnvironment {
    fn default() -> Self {
        Self::new(Vec::new(), Vec::new())
    }
}

impl ToolEnvironment {
    pub fn new(specs: Vec<ToolSpec>, ground_truth: Vec<GroundTruthCall>) -> Self {
        Self {
            specs,
            ground_truth,
            consumed: BTreeSet::new(),
            matcher: Arc::new(StructuralMatcher),
        }
    }

    pub fn with_matcher(mut self, matcher: Arc<dyn CallMatcher>) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn consumed(&self) -> &BTreeSet<u32> {
        &self.consumed
    }

    /// Fresh copy with nothing consumed, sharing the matcher.
    pub fn reset(&self) -> Self {
        Self {
            consumed: BTreeSet::new(),
            ..self.clone()
        }
    }

    fn candidates(&self, call: &ToolCall) -> impl Iterator<Item = &GroundTruthCall> {
        let mut sorted: Vec<&GroundTruthCall> = self
            .ground_truth
            .iter()
            .filter(move |gt| self.matcher.matches(call, gt, &self.specs))
            .collect();
        sorted.sort_by_key(|gt| gt.id);
        sorted.into_iter()
    }
}

/// Resolves a call. The lowest-id unconsumed matching ground-truth call is
/// consumed; if every match is already consumed the call is a replay and gets
/// the cached response. Failed calls consume nothing and may be retried.
pub fn match_call(
    call: &ToolCall,
    env: &mut ToolEnvironment,
    now: f64,
    eoa_time: f64,
) -> MatchOutcome {
    let phase = if now < eoa_time {
        Phase::Early
    } else {
        Phase::Late
    };
    let mut replay: Option<(u32, String)> = None;
    let mut fresh: Option<(u32, String)> = None;
    for gt in env.candidates(call) {
        if env.consumed.contains(&gt.id) {
            replay.get_or_insert((gt.id, gt.response.clone()));
        } else {
            fresh = Some((gt.id, gt.response.clone()));
            break;
        }
    }
    if let Some((id, response_payload)) = fresh {
        env.consumed.insert(id);
        return MatchOutcome {
            matched: Some(id),
            response_payload,
            is_error: false,
            phase,
            replayed: false,
        };
    }
    match replay {
        Some((id, response_payload)) => MatchOutcome {
            matched: Some(id),
            response_payload,
            is_error: false,
            phase,
            replayed: true,
        },
        None => MatchOutcome {
            matched: None,
            response_payload: GENERIC_ERROR.to_string(),
            is_error: true,
            phase,
            replayed: false,
        },
    }
}
