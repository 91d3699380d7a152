//! Training sequences with per-block loss masks.
//!
//! A sequence interleaves speech chunks and thinking blocks and ends with
//! the spoken response. Only model-emitted blocks carry `mask: true`:
//! thinking (including its markers and any `[INTERRUPT]`) and the final
//! response. Speech, the `[EOPA]`/`[EOA]` delimiters and tool responses
//! are context only.
//!
//! Corpus files start with a `{"type":"train_corpus","version":1}` header
//! followed by one sequence per line.

mod build;

pub use build::{sequence_from_trace, toolcall_sequence, TrainInput};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::orchestrator::chunk_tokens;
use crate::timeline::SpeechChunk;
use crate::tokens::{EOA, EOPA, INTERRUPT, THINK_CLOSE, THINK_OPEN, TOOL_CALL_CLOSE};

/// Thinking text for a chunk in which no tool call can be made yet.
pub const NO_CALL_TEMPLATE: &str = "No additional tool calls can be made at this point.";

pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("{chunks} speech chunks but {thinkings} thinking blocks")]
    LengthMismatch { chunks: usize, thinkings: usize },
    #[error("a sequence needs at least one chunk")]
    Empty,
    #[error("thinking block {index} must contain {INTERRUPT}")]
    MissingInterrupt { index: usize },
    #[error("thinking block {index} interrupts before the last block")]
    EarlyInterrupt { index: usize },
    #[error("placement in chunk {chunk} at offset {offset} is out of range")]
    PlacementOutOfRange { chunk: usize, offset: usize },
    #[error("placement in chunk {chunk} at offset {offset} does not follow a call span")]
    PlacementNotAfterCall { chunk: usize, offset: usize },
    #[error("invalid sequence: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Speech,
    Thinking,
    ToolResponse,
    FinalResponse,
    Marker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub kind: BlockKind,
    pub tokens: Vec<String>,
    #[serde(rename = "mask")]
    pub loss_mask: bool,
}

impl TrainBlock {
    fn new(kind: BlockKind, tokens: Vec<String>) -> Self {
        let loss_mask = expected_mask(kind, &tokens);
        Self {
            kind,
            tokens,
            loss_mask,
        }
    }
}

fn model_marker(t: &str) -> bool {
    matches!(t, THINK_OPEN | THINK_CLOSE | INTERRUPT)
}

/// The only mask value a block of this kind and content may carry.
pub fn expected_mask(kind: BlockKind, tokens: &[String]) -> bool {
    match kind {
        BlockKind::Thinking | BlockKind::FinalResponse => true,
        BlockKind::Speech | BlockKind::ToolResponse => false,
        BlockKind::Marker => !tokens.is_empty() && tokens.iter().all(|t| model_marker(t)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Plain,
    Interrupt,
    ToolCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSequence {
    pub shape: Shape,
    pub blocks: Vec<TrainBlock>,
}

/// A tool response spliced into thinking chunk `chunk` (1-based), before the
/// token at `offset` of that chunk's thinking tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPlacement {
    pub chunk: usize,
    pub offset: usize,
    pub payload: Vec<String>,
}

/// Adds the thinking markers if the caller left them out.
fn wrap_thinking(tokens: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len() + 2);
    if tokens.first().map(String::as_str) != Some(THINK_OPEN) {
        out.push(THINK_OPEN.to_string());
    }
    out.extend(tokens.iter().cloned());
    if out.len() < 2 || out.last().map(String::as_str) != Some(THINK_CLOSE) {
        out.push(THINK_CLOSE.to_string());
    }
    out
}

fn speech_blocks(blocks: &mut Vec<TrainBlock>, words: Vec<String>, marker: &str) {
    blocks.push(TrainBlock::new(BlockKind::Speech, words));
    blocks.push(TrainBlock::new(BlockKind::Marker, vec![marker.to_string()]));
}

fn interleave(
    chunks: &[Vec<String>],
    thinkings: &[Vec<String>],
    last_marker: &str,
    placements: &[ToolPlacement],
    response: &[String],
) -> Result<Vec<TrainBlock>, TrainError> {
    let n = chunks.len();
    let mut blocks = Vec::new();
    for (i, (words, thinking)) in chunks.iter().zip(thinkings).enumerate() {
        let marker = if i + 1 == n { last_marker } else { EOPA };
        speech_blocks(&mut blocks, words.clone(), marker);
        let thinking = wrap_thinking(thinking);
        let mut here: Vec<&ToolPlacement> =
            placements.iter().filter(|p| p.chunk == i + 1).collect();
        here.sort_by_key(|p| p.offset);
        let mut from = 0;
        for p in here {
            if p.offset <= from || p.offset >= thinking.len() {
                return Err(TrainError::PlacementOutOfRange {
                    chunk: p.chunk,
                    offset: p.offset,
                });
            }
            if thinking[p.offset - 1] != TOOL_CALL_CLOSE {
                return Err(TrainError::PlacementNotAfterCall {
                    chunk: p.chunk,
                    offset: p.offset,
                });
            }
            blocks.push(TrainBlock::new(
                BlockKind::Thinking,
                thinking[from..p.offset].to_vec(),
            ));
            blocks.push(TrainBlock::new(BlockKind::ToolResponse, p.payload.clone()));
            from = p.offset;
        }
        blocks.push(TrainBlock::new(
            BlockKind::Thinking,
            thinking[from..].to_vec(),
        ));
    }
    blocks.push(TrainBlock::new(BlockKind::FinalResponse, response.to_vec()));
    Ok(blocks)
}

fn check_lengths(chunks: usize, thinkings: usize) -> Result<(), TrainError> {
    if chunks != thinkings {
        return Err(TrainError::LengthMismatch { chunks, thinkings });
    }
    if chunks == 0 {
        return Err(TrainError::Empty);
    }
    Ok(())
}

fn words_of(chunks: &[SpeechChunk]) -> Vec<Vec<String>> {
    chunks.iter().map(chunk_tokens).collect()
}

/// `S_1, R_1, …, S_N, R_N, O`, with `[EOA]` after the last chunk.
pub fn assemble_plain(
    chunks: &[SpeechChunk],
    thinkings: &[Vec<String>],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    assemble_plain_tokens(&words_of(chunks), thinkings, response)
}

pub fn assemble_plain_tokens(
    chunks: &[Vec<String>],
    thinkings: &[Vec<String>],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    check_lengths(chunks.len(), thinkings.len())?;
    let n = thinkings.len();
    if let Some(i) = thinkings[..n - 1]
        .iter()
        .position(|r| r.iter().any(|t| t == INTERRUPT))
    {
        return Err(TrainError::EarlyInterrupt { index: i + 1 });
    }
    Ok(TrainSequence {
        shape: Shape::Plain,
        blocks: interleave(chunks, thinkings, EOA, &[], response)?,
    })
}

/// `S_1, R_1, …, S_k, R_k, O` where only `R_k` interrupts. The turn was cut,
/// so `S_k` ends with `[EOPA]`.
pub fn assemble_interrupt(
    chunks: &[SpeechChunk],
    thinkings: &[Vec<String>],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    assemble_interrupt_tokens(&words_of(chunks), thinkings, response)
}

pub fn assemble_interrupt_tokens(
    chunks: &[Vec<String>],
    thinkings: &[Vec<String>],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    check_lengths(chunks.len(), thinkings.len())?;
    let k = thinkings.len();
    if let Some(i) = thinkings[..k - 1]
        .iter()
        .position(|r| r.iter().any(|t| t == INTERRUPT))
    {
        return Err(TrainError::EarlyInterrupt { index: i + 1 });
    }
    if !thinkings[k - 1].iter().any(|t| t == INTERRUPT) {
        return Err(TrainError::MissingInterrupt { index: k });
    }
    Ok(TrainSequence {
        shape: Shape::Interrupt,
        blocks: interleave(chunks, thinkings, EOPA, &[], response)?,
    })
}

/// Like [`assemble_plain`], with each placed payload splitting its thinking
/// chunk into two thinking fragments around a tool-response block.
pub fn assemble_toolcall(
    chunks: &[SpeechChunk],
    thinkings: &[Vec<String>],
    placements: &[ToolPlacement],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    assemble_toolcall_tokens(&words_of(chunks), thinkings, placements, response)
}

pub fn assemble_toolcall_tokens(
    chunks: &[Vec<String>],
    thinkings: &[Vec<String>],
    placements: &[ToolPlacement],
    response: &[String],
) -> Result<TrainSequence, TrainError> {
    check_lengths(chunks.len(), thinkings.len())?;
    if let Some(p) = placements
        .iter()
        .find(|p| p.chunk == 0 || p.chunk > chunks.len())
    {
        return Err(TrainError::PlacementOutOfRange {
            chunk: p.chunk,
            offset: p.offset,
        });
    }
    Ok(TrainSequence {
        shape: Shape::ToolCall,
        blocks: interleave(chunks, thinkings, EOA, placements, response)?,
    })
}

/// Every structural problem with `seq`; empty when it is valid.
pub fn validate_sequence(seq: &TrainSequence) -> Vec<String> {
    let mut errs = Vec::new();
    for (i, b) in seq.blocks.iter().enumerate() {
        let want = expected_mask(b.kind, &b.tokens);
        if b.loss_mask != want {
            errs.push(format!(
                "block {i} ({:?}) has mask {} but must be {want}",
                b.kind, b.loss_mask
            ));
        }
    }

    // Walk: (Speech, Marker, thinking group)+, FinalResponse.
    let blocks = &seq.blocks;
    let mut i = 0;
    let mut markers = Vec::new();
    let mut groups: Vec<Vec<String>> = Vec::new();
    while i < blocks.len() && blocks[i].kind == BlockKind::Speech {
        if blocks[i].tokens.iter().any(|t| crate::tokens::is_marker(t)) {
            errs.push(format!("block {i}: speech contains a marker"));
        }
        i += 1;
        match blocks.get(i) {
            Some(b)
                if b.kind == BlockKind::Marker
                    && b.tokens.len() == 1
                    && (b.tokens[0] == EOPA || b.tokens[0] == EOA) =>
            {
                markers.push(b.tokens[0].clone());
                i += 1;
            }
            _ => {
                errs.push(format!(
                    "block {i}: speech must be followed by {EOPA} or {EOA}"
                ));
                return errs;
            }
        }
        let mut group = Vec::new();
        let mut expect_thinking = true;
        while let Some(b) = blocks.get(i) {
            match (b.kind, expect_thinking) {
                (BlockKind::Thinking, true) => {
                    group.extend(b.tokens.iter().cloned());
                    expect_thinking = false;
                }
                (BlockKind::ToolResponse, false) => {
                    if seq.shape != Shape::ToolCall {
                        errs.push(format!(
                            "block {i}: tool response in a {:?} sequence",
                            seq.shape
                        ));
                    }
                    if group.last().map(String::as_str) != Some(TOOL_CALL_CLOSE) {
                        errs.push(format!(
                            "block {i}: tool response does not follow a call span"
                        ));
                    }
                    expect_thinking = true;
                }
                _ => break,
            }
            i += 1;
        }
        if expect_thinking {
            errs.push(format!("block {i}: expected a thinking block"));
            return errs;
        }
        let gi = groups.len() + 1;
        if group.first().map(String::as_str) != Some(THINK_OPEN) {
            errs.push(format!("thinking {gi} does not open with {THINK_OPEN}"));
        }
        if group.last().map(String::as_str) != Some(THINK_CLOSE) {
            errs.push(format!("thinking {gi} does not close with {THINK_CLOSE}"));
        }
        groups.push(group);
    }
    match blocks.get(i) {
        Some(b) if b.kind == BlockKind::FinalResponse && i + 1 == blocks.len() => {}
        _ => errs.push(format!(
            "block {i}: expected the final response as the last block"
        )),
    }
    if groups.is_empty() {
        errs.push("no speech chunks".into());
        return errs;
    }

    let n = groups.len();
    let interrupts: Vec<usize> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|t| t == INTERRUPT))
        .map(|(i, _)| i + 1)
        .collect();
    let eoa_at: Vec<usize> = markers
        .iter()
        .enumerate()
        .filter(|(_, m)| *m == EOA)
        .map(|(i, _)| i + 1)
        .collect();
    match seq.shape {
        Shape::Plain | Shape::ToolCall => {
            if eoa_at != [n] {
                errs.push(format!("{EOA} must close exactly the last chunk"));
            }
            if interrupts.iter().any(|&k| k < n) {
                errs.push("an interrupt before the last chunk needs the interrupt shape".into());
            }
        }
        Shape::Interrupt => {
            if !eoa_at.is_empty() {
                errs.push(format!("an interrupted turn never reaches {EOA}"));
            }
            if interrupts != [n] {
                errs.push(format!(
                    "only the last thinking block ({n}) may interrupt, and it must"
                ));
            }
        }
    }
    errs
}

/// One problem found in a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum CorpusHeader {
    TrainCorpus { version: u32 },
}

pub fn write_corpus<W: Write>(mut w: W, seqs: &[TrainSequence]) -> std::io::Result<()> {
    jsonl::write_line(
        &mut w,
        &CorpusHeader::TrainCorpus {
            version: CORPUS_VERSION,
        },
    )?;
    for s in seqs {
        jsonl::write_line(&mut w, s)?;
    }
    Ok(())
}

pub fn corpus_to_string(seqs: &[TrainSequence]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, seqs).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Parses a corpus, returning each sequence with its line number.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<(usize, TrainSequence)>, JsonlError> {
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.as_ref().is_ok_and(|l| l.trim().is_empty()));
    let (_, first) = lines.next().ok_or(JsonlError::Empty)?;
    let first = first?;
    match serde_json::from_str::<CorpusHeader>(&first) {
        Ok(CorpusHeader::TrainCorpus { version }) if version == CORPUS_VERSION => {}
        Ok(CorpusHeader::TrainCorpus { version }) => {
            return Err(JsonlError::invalid(
                1,
                format!("unsupported corpus version {version}"),
            ))
        }
        Err(e) => {
            return Err(JsonlError::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let seq = serde_json::from_str(&line).map_err(|e| JsonlError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, seq));
    }
    Ok(out)
}

/// Validates every sequence of a corpus file; parse failures are reported
/// as diagnostics too.
pub fn validate_corpus<R: BufRead>(r: R) -> Vec<Diagnostic> {
    match read_corpus(r) {
        Err(e) => vec![Diagnostic {
            line: e.line().unwrap_or(0),
            message: e.to_string(),
        }],
        Ok(seqs) => seqs
            .iter()
            .flat_map(|(line, s)| {
                validate_sequence(s)
                    .into_iter()
                    .map(move |message| Diagnostic {
                        line: *line,
                        message,
                    })
            })
            .collect(),
    }
}
