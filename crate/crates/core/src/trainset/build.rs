use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{
    assemble_interrupt_tokens, assemble_plain_tokens, assemble_toolcall_tokens, Shape,
    ToolPlacement, TrainError, TrainSequence, NO_CALL_TEMPLATE,
};
use crate::jsonl::{self, JsonlError};
use crate::orchestrator::chunk_tokens;
use crate::scenario_io::Scenario;
use crate::timeline::{segment_transcript, ChunkingConfig};
use crate::tokens::{tokenize, THINK_CLOSE, THINK_OPEN};
use crate::tool_runtime::{
    annotate_earliest_times, assign_to_chunks, render_tool_call, tool_payload_tokens,
};
use crate::trace::{Mode, TraceStatus, TurnTrace};

/// One record of an assembly input file: the raw pieces of a sequence.
/// Placement offsets index the thinking tokens with their markers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainInput {
    pub shape: Shape,
    pub chunks: Vec<Vec<String>>,
    pub thinkings: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub placements: Vec<ToolPlacement>,
    pub response: Vec<String>,
}

impl TrainInput {
    pub fn assemble(&self) -> Result<TrainSequence, TrainError> {
        match self.shape {
            Shape::Plain => assemble_plain_tokens(&self.chunks, &self.thinkings, &self.response),
            Shape::Interrupt => {
                assemble_interrupt_tokens(&self.chunks, &self.thinkings, &self.response)
            }
            Shape::ToolCall => assemble_toolcall_tokens(
                &self.chunks,
                &self.thinkings,
                &self.placements,
                &self.response,
            ),
        }
    }

    /// Reads a `{"type":"train_input"}`-headed file of records.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<(usize, TrainInput)>, JsonlError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Line {
            Header {
                #[serde(rename = "type")]
                kind: String,
            },
            Input(TrainInput),
        }
        let mut lines = jsonl::records::<Line, _>(r);
        match lines.next().ok_or(JsonlError::Empty)?? {
            (_, Line::Header { kind }) if kind == "train_input" => {}
            (line, _) => {
                return Err(JsonlError::invalid(
                    line,
                    "first line must be a train_input header",
                ))
            }
        }
        lines
            .map(|item| match item? {
                (line, Line::Input(input)) => Ok((line, input)),
                (line, Line::Header { .. }) => Err(JsonlError::invalid(line, "duplicate header")),
            })
            .collect()
    }
}

/// Builds a tool-use sequence from a scenario: each ground-truth call is
/// written into the first thinking chunk in which it is callable, followed
/// by its response; chunks without calls state that none can be made.
///
/// `thinkings` holds free reasoning text per chunk (without markers).
pub fn toolcall_sequence(
    scenario: &Scenario,
    chunking: &ChunkingConfig,
    thinkings: &[Vec<String>],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    let chunks = segment_transcript(&scenario.words, chunking)
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    let n = chunks.len();
    if thinkings.len() != n {
        return Err(TrainError::LengthMismatch {
            chunks: n,
            thinkings: thinkings.len(),
        });
    }
    let mut calls = scenario.ground_truth_calls.clone();
    if calls.iter().any(|c| c.earliest_time.is_none()) {
        annotate_earliest_times(&mut calls, &scenario.words)
            .map_err(|e| TrainError::Invalid(e.to_string()))?;
    }
    let assignment =
        assign_to_chunks(&calls, chunking).map_err(|e| TrainError::Invalid(e.to_string()))?;

    let mut blocks = Vec::with_capacity(n);
    let mut placements = Vec::new();
    for (i, text) in thinkings.iter().enumerate() {
        let index = i + 1;
        let mut ids: Vec<u32> = assignment.calls_in(index).to_vec();
        if index == n {
            // Calls only callable after the last word still belong to the
            // last chunk.
            for (c, later) in assignment.iter() {
                if c > n {
                    ids.extend_from_slice(later);
                }
            }
        }
        let mut tokens = vec![THINK_OPEN.to_string()];
        tokens.extend(text.iter().cloned());
        if ids.is_empty() {
            tokens.extend(tokenize(NO_CALL_TEMPLATE));
        }
        for id in ids {
            let call = calls
                .iter()
                .find(|c| c.id == id)
                .expect("assigned ids exist");
            tokens.extend(render_tool_call(&call.name, &call.arguments));
            placements.push(ToolPlacement {
                chunk: index,
                offset: tokens.len(),
                payload: tool_payload_tokens(&call.response),
            });
        }
        tokens.push(THINK_CLOSE.to_string());
        blocks.push(tokens);
    }
    let words: Vec<Vec<String>> = chunks.iter().map(chunk_tokens).collect();
    assemble_toolcall_tokens(&words, &blocks, &placements, response)
}

/// Converts a finished listening or call-after-listen trace into the
/// sequence that would teach a model to produce it.
pub fn sequence_from_trace(trace: &TurnTrace) -> Result<TrainSequence, TrainError> {
    if trace.mode == Mode::Combined {
        return Err(TrainError::Invalid(
            "combined-mode traces rebuild their context and have no single sequence".into(),
        ));
    }
    if trace.status != TraceStatus::Completed {
        return Err(TrainError::Invalid(format!(
            "trace for {} did not complete",
            trace.scenario_id
        )));
    }
    let response = trace
        .response()
        .ok_or_else(|| TrainError::Invalid("trace has no response".into()))?;
    let words: Vec<Vec<String>> = trace.delivered_chunks().map(chunk_tokens).collect();
    let mut thinkings = Vec::new();
    let mut placements = Vec::new();
    for chunk in trace.thinking_chunks() {
        let mut own = Vec::new();
        let mut injections = chunk.injections.clone();
        injections.sort_by_key(|j| j.offset);
        let mut removed = 0;
        for inj in &injections {
            placements.push(ToolPlacement {
                chunk: chunk.index,
                offset: inj.offset - removed,
                payload: chunk.tokens[inj.offset..inj.offset + inj.len].to_vec(),
            });
            removed += inj.len;
        }
        for (i, t) in chunk.tokens.iter().enumerate() {
            if !chunk.is_injected(i) {
                own.push(t.clone());
            }
        }
        thinkings.push(own);
    }
    if trace.interrupted_at.is_some() {
        if !placements.is_empty() {
            return Err(TrainError::Invalid(
                "interrupted traces with tool responses have no sequence shape".into(),
            ));
        }
        assemble_interrupt_tokens(&words, &thinkings, &response.tokens)
    } else if placements.is_empty() {
        assemble_plain_tokens(&words, &thinkings, &response.tokens)
    } else {
        assemble_toolcall_tokens(&words, &thinkings, &placements, &response.tokens)
    }
}
