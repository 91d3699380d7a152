use super::{MatchOutcome, ToolCall, ToolError};
use crate::tokens::{INTERRUPT, TOOL_CALL_CLOSE, TOOL_CALL_OPEN};
use crate::trace::{Injection, ThinkingChunk};

/// Response payloads are split on whitespace only; they are data, not
/// model text, so markers inside them are not cut out.
pub fn tool_payload_tokens(payload: &str) -> Vec<String> {
    payload.split_whitespace().map(str::to_string).collect()
}

/// Splices the outcome's payload right after `call`'s span. Injections
/// already recorded after the splice point shift right by the payload
/// length.
pub fn inject_tool_response(
    thinking: &ThinkingChunk,
    call: &ToolCall,
    outcome: &MatchOutcome,
) -> Result<ThinkingChunk, ToolError> {
    let span = call.raw_span;
    let len = thinking.tokens.len();
    let well_formed = span.start < span.end
        && span.end < len
        && thinking.tokens[span.start] == TOOL_CALL_OPEN
        && thinking.tokens[span.end] == TOOL_CALL_CLOSE;
    if !well_formed {
        return Err(ToolError::SpanOutOfBounds {
            start: span.start,
            end: span.end,
            len,
        });
    }
    let payload = tool_payload_tokens(&outcome.response_payload);
    let at = span.end + 1;
    let n = payload.len();
    let mut out = thinking.clone();
    out.tokens.splice(at..at, payload);
    for inj in &mut out.injections {
        if inj.offset >= at {
            inj.offset += n;
        }
    }
    out.injections.push(Injection { offset: at, len: n });
    out.injections.sort_by_key(|i| i.offset);
    out.injected_tool_tokens += n;
    out.contains_interrupt = out.tokens.iter().any(|t| t == INTERRUPT);
    Ok(out)
}

/// Applies several splices whose spans refer to the original chunk,
/// left to right.
pub fn inject_all(
    thinking: &ThinkingChunk,
    exchanges: &[(ToolCall, MatchOutcome)],
) -> Result<ThinkingChunk, ToolError> {
    let mut ordered: Vec<&(ToolCall, MatchOutcome)> = exchanges.iter().collect();
    ordered.sort_by_key(|(c, _)| c.raw_span.start);
    let mut out = thinking.clone();
    let mut shift = 0usize;
    for (call, outcome) in ordered {
        let mut shifted = call.clone();
        shifted.raw_span.start += shift;
        shifted.raw_span.end += shift;
        let before = out.injected_tool_tokens;
        out = inject_tool_response(&out, &shifted, outcome)?;
        shift += out.injected_tool_tokens - before;
    }
    Ok(out)
}
