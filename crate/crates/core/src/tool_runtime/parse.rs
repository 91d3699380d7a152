use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{TokenSpan, ToolCall};
use crate::tokens::{detokenize, tokenize, TOOL_CALL_CLOSE, TOOL_CALL_OPEN};

/// A delimited span that could not be turned into a call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedSpan {
    /// Index of the opening marker.
    pub start: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedCalls {
    pub calls: Vec<ToolCall>,
    pub malformed: Vec<MalformedSpan>,
}

#[derive(Serialize)]
struct WireCallRef<'a> {
    name: &'a str,
    arguments: &'a BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireCall {
    name: String,
    #[serde(default)]
    arguments: BTreeMap<String, Value>,
}

/// Tokens of a call span as the model writes it.
pub fn render_tool_call(name: &str, arguments: &BTreeMap<String, Value>) -> Vec<String> {
    let json = serde_json::to_string(&WireCallRef { name, arguments })
        .expect("string-keyed JSON always serializes");
    let mut out = vec![TOOL_CALL_OPEN.to_string()];
    out.extend(tokenize(&json));
    out.push(TOOL_CALL_CLOSE.to_string());
    out
}

/// Parses the span `tokens[open..=close]`, which must start and end with the
/// call markers.
pub fn parse_span<S: AsRef<str>>(
    tokens: &[S],
    open: usize,
    close: usize,
) -> Result<ToolCall, String> {
    if open >= close || close >= tokens.len() {
        return Err(format!("span [{open}, {close}] is empty or out of range"));
    }
    if tokens[open].as_ref() != TOOL_CALL_OPEN || tokens[close].as_ref() != TOOL_CALL_CLOSE {
        return Err("span is not delimited by call markers".into());
    }
    let body = detokenize(&tokens[open + 1..close]);
    let wire: WireCall =
        serde_json::from_str(&body).map_err(|e| format!("call body is not a call object: {e}"))?;
    if wire.name.trim().is_empty() {
        return Err("call has an empty name".into());
    }
    Ok(ToolCall {
        name: wire.name,
        arguments: wire.arguments,
        raw_span: TokenSpan {
            start: open,
            end: close,
        },
    })
}

/// Extracts every well-formed call span. An opening marker followed by
/// another opening marker before any close is reported as malformed, as is
/// one that is never closed.
pub fn parse_tool_calls<S: AsRef<str>>(tokens: &[S]) -> ParsedCalls {
    let mut out = ParsedCalls::default();
    let mut open: Option<usize> = None;
    for (i, tok) in tokens.iter().enumerate() {
        match tok.as_ref() {
            TOOL_CALL_OPEN => {
                if let Some(start) = open.replace(i) {
                    out.malformed.push(MalformedSpan {
                        start,
                        reason: "missing close marker".into(),
                    });
                }
            }
            TOOL_CALL_CLOSE => match open.take() {
                Some(start) => match parse_span(tokens, start, i) {
                    Ok(call) => out.calls.push(call),
                    Err(reason) => out.malformed.push(MalformedSpan { start, reason }),
                },
                None => out.malformed.push(MalformedSpan {
                    start: i,
                    reason: "close marker without an open marker".into(),
                }),
            },
            _ => {}
        }
    }
    if let Some(start) = open {
        out.malformed.push(MalformedSpan {
            start,
            reason: "missing close marker".into(),
        });
    }
    out
}
