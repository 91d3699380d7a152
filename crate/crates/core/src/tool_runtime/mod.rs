//! Tool calls inside thinking text.
//!
//! Calls are written by the model as `<tool_call> {"name": ..., "arguments":
//! {...}} </tool_call>` spans. They are matched against the scenario's
//! ground-truth calls; a match returns the recorded response, anything else
//! returns [`GENERIC_ERROR`]. Responses are spliced into the thinking chunk
//! right after the call span.

mod inject;
mod matching;
mod parse;
mod schedule;

pub use inject::{inject_all, inject_tool_response, tool_payload_tokens};
pub use matching::{
    canonicalize, match_call, CallMatcher, CanonicalValue, JudgeMatcher, StructuralMatcher,
    ToolEnvironment,
};
pub use parse::{parse_span, parse_tool_calls, render_tool_call, MalformedSpan, ParsedCalls};
pub use schedule::{
    annotate_earliest_times, assign_to_chunks, earliest_call_time, topological_order,
    ChunkAssignment,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Payload returned for any call that matches no ground-truth call.
pub const GENERIC_ERROR: &str = "Error: the tool call could not be completed.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("call {id}: argument {argument:?} has no value span")]
    MissingSpan { id: u32, argument: String },
    #[error("call {id}: span [{first}, {last}] for {argument:?} is outside the transcript")]
    BadSpan {
        id: u32,
        argument: String,
        first: usize,
        last: usize,
    },
    #[error("call {id} depends on unknown call {dependency}")]
    UnknownDependency { id: u32, dependency: u32 },
    #[error("call {id}: dependency {dependency} has no earliest time yet")]
    DependencyUnscheduled { id: u32, dependency: u32 },
    #[error("dependency cycle among calls {0:?}")]
    Cycle(Vec<u32>),
    #[error("duplicate ground-truth call id {0}")]
    DuplicateId(u32),
    #[error("call {0} has no earliest time")]
    MissingEarliestTime(u32),
    #[error(
        "call {id}: earliest time {time} precedes dependency {dependency} at {dependency_time}"
    )]
    EarlierThanDependency {
        id: u32,
        time: f64,
        dependency: u32,
        dependency_time: f64,
    },
    #[error(
        "tool call span [{start}, {end}] does not lie inside a thinking chunk of {len} tokens"
    )]
    SpanOutOfBounds {
        start: usize,
        end: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

impl ParamSpec {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self.type_tag.to_ascii_lowercase().as_str(),
            "number" | "integer" | "int" | "float" | "double"
        )
    }
}

/// A tool the model may call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, deserialize_with = "unique_params")]
    pub parameters: BTreeMap<String, ParamSpec>,
}

fn unique_params<'de, D>(de: D) -> Result<BTreeMap<String, ParamSpec>, D::Error>
where
    D: Deserializer<'de>,
{
    use serde::de::{Error, MapAccess, Visitor};

    struct UniqueVisitor;
    impl<'de> Visitor<'de> for UniqueVisitor {
        type Value = BTreeMap<String, ParamSpec>;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a map of parameter specs")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = map.next_entry::<String, ParamSpec>()? {
                if out.insert(k.clone(), v).is_some() {
                    return Err(A::Error::custom(format!("duplicate parameter {k:?}")));
                }
            }
            Ok(out)
        }
    }
    de.deserialize_map(UniqueVisitor)
}

/// Where the value of a ground-truth argument comes from in the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// Inclusive word-index range `[first, last]` that states the value.
    Span([usize; 2]),
    /// Produced by the response of a call this one depends on.
    Dependency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCall {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
    pub response: String,
    #[serde(default)]
    pub depends_on: BTreeSet<u32>,
    #[serde(default)]
    pub earliest_time: Option<f64>,
    /// Key of the response payload whose value a good final answer repeats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_spans: BTreeMap<String, ValueSource>,
}

/// Inclusive token range of a call span, markers included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

/// A call parsed out of thinking text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub name: String,
    pub arguments: BTreeMap<String, Value>,
    pub raw_span: TokenSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Early,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub matched: Option<u32>,
    pub response_payload: String,
    pub is_error: bool,
    pub phase: Phase,
    /// The call repeated one that had already consumed its ground-truth id.
    #[serde(default)]
    pub replayed: bool,
}

/// Checks ids are unique, dependencies exist and form no cycle, and that
/// assigned earliest times never precede a dependency's.
pub fn validate_ground_truth(calls: &[GroundTruthCall]) -> Result<(), ToolError> {
    let mut seen = BTreeSet::new();
    for c in calls {
        if !seen.insert(c.id) {
            return Err(ToolError::DuplicateId(c.id));
        }
    }
    topological_order(calls)?;
    let by_id: BTreeMap<u32, &GroundTruthCall> = calls.iter().map(|c| (c.id, c)).collect();
    for c in calls {
        let Some(time) = c.earliest_time else {
            continue;
        };
        for dep in &c.depends_on {
            if let Some(dependency_time) = by_id[dep].earliest_time {
                if time < dependency_time {
                    return Err(ToolError::EarlierThanDependency {
                        id: c.id,
                        time,
                        dependency: *dep,
                        dependency_time,
                    });
                }
            }
        }
    }
    Ok(())
}
