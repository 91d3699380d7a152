//! Turn traces: the event log of one simulated user turn and its
//! line-delimited JSON form.
//!
//! A trace file starts with a `header` line (scenario id, mode, session
//! config, preamble tokens), has one line per event, and ends with a
//! `summary` line. Field order is fixed by the type definitions, so equal
//! traces serialize to identical bytes.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::timeline::{ChunkingConfig, SpeechChunk};
use crate::tokens::{INTERRUPT, THINK_CLOSE};
use crate::tool_runtime::{MatchOutcome, ToolCall};

/// Payload tokens spliced into a thinking chunk at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub offset: usize,
    pub len: usize,
}

/// One unspoken reasoning block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkingChunk {
    pub index: usize,
    pub tokens: Vec<String>,
    pub truncated: bool,
    pub contains_interrupt: bool,
    pub injected_tool_tokens: usize,
    pub injections: Vec<Injection>,
    /// Tokens placed after the opening marker that were produced in an
    /// earlier phase (successful calls carried into a call-after-listen
    /// context). Neither budgeted nor timed.
    #[serde(default)]
    pub carried_tokens: usize,
}

impl ThinkingChunk {
    pub fn new(index: usize, tokens: Vec<String>) -> Self {
        let contains_interrupt = tokens.iter().any(|t| t == INTERRUPT);
        Self {
            index,
            tokens,
            truncated: false,
            contains_interrupt,
            injected_tool_tokens: 0,
            injections: Vec::new(),
            carried_tokens: 0,
        }
    }

    /// Tokens the model produced in this block, markers included.
    pub fn self_generated(&self) -> usize {
        self.tokens.len() - self.injected_tool_tokens - self.carried_tokens
    }

    pub fn is_closed(&self) -> bool {
        self.tokens.last().is_some_and(|t| t == THINK_CLOSE)
    }

    /// Whether position `i` of `tokens` lies inside an injected payload.
    pub fn is_injected(&self, i: usize) -> bool {
        self.injections
            .iter()
            .any(|inj| i >= inj.offset && i < inj.offset + inj.len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseChunk {
    pub tokens: Vec<String>,
    /// Virtual time at which the first token is emitted.
    pub emit_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "shanks")]
    Shanks,
    #[serde(rename = "call-after-listen")]
    CallAfterListen,
    #[serde(rename = "combined")]
    Combined,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Shanks => "shanks",
            Mode::CallAfterListen => "call-after-listen",
            Mode::Combined => "combined",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shanks" => Ok(Mode::Shanks),
            "call-after-listen" => Ok(Mode::CallAfterListen),
            "combined" => Ok(Mode::Combined),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Completed,
    ContextOverflow,
    /// The session stopped on a backend failure or the iteration cap.
    Aborted,
}

/// Limits for one simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub chunking: ChunkingConfig,
    /// Maximum generation calls inside one thinking block.
    pub iteration_cap: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            chunking: ChunkingConfig::default(),
            iteration_cap: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    ChunkDelivered {
        time: f64,
        chunk: SpeechChunk,
    },
    ThinkingGenerated {
        start_time: f64,
        chunk: ThinkingChunk,
    },
    ToolExchange {
        time: f64,
        /// Index of the thinking chunk the call was made in.
        thinking_index: usize,
        call: ToolCall,
        outcome: MatchOutcome,
    },
    /// The context was rebuilt as the full transcript so far, without chunk
    /// markers or thinking.
    ContextRebuilt {
        time: f64,
    },
    ResponseEmitted {
        response: ResponseChunk,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnTrace {
    pub scenario_id: String,
    pub mode: Mode,
    pub config: SessionConfig,
    pub preamble: Vec<String>,
    pub events: Vec<TraceEvent>,
    pub interrupted_at: Option<usize>,
    pub t_interrupt: Option<f64>,
    pub undelivered_overlap: Option<SpeechChunk>,
    pub post_turn_tokens: usize,
    pub status: TraceStatus,
    pub error: Option<String>,
}

impl TurnTrace {
    pub fn delivered_chunks(&self) -> impl Iterator<Item = &SpeechChunk> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ChunkDelivered { chunk, .. } => Some(chunk),
            _ => None,
        })
    }

    pub fn thinking_chunks(&self) -> impl Iterator<Item = &ThinkingChunk> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ThinkingGenerated { chunk, .. } => Some(chunk),
            _ => None,
        })
    }

    pub fn exchanges(&self) -> impl Iterator<Item = (f64, &ToolCall, &MatchOutcome)> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ToolExchange {
                time,
                call,
                outcome,
                ..
            } => Some((*time, call, outcome)),
            _ => None,
        })
    }

    pub fn response(&self) -> Option<&ResponseChunk> {
        self.events.iter().rev().find_map(|e| match e {
            TraceEvent::ResponseEmitted { response } => Some(response),
            _ => None,
        })
    }

    /// Delivery time of the chunk carrying the end-of-audio marker.
    pub fn eoa_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match e {
            TraceEvent::ChunkDelivered { time, chunk } if chunk.is_final => Some(*time),
            _ => None,
        })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = TraceLine::Header(TraceHeader {
            scenario_id: self.scenario_id.clone(),
            mode: self.mode,
            config: self.config.clone(),
            preamble: self.preamble.clone(),
        });
        jsonl::write_line(&mut w, &header)?;
        for e in &self.events {
            jsonl::write_line(&mut w, &TraceLine::from(e.clone()))?;
        }
        let summary = TraceLine::Summary(TraceSummary {
            interrupted_at: self.interrupted_at,
            t_interrupt: self.t_interrupt,
            undelivered_overlap: self.undelivered_overlap.clone(),
            post_turn_tokens: self.post_turn_tokens,
            status: self.status,
            error: self.error.clone(),
        });
        jsonl::write_line(&mut w, &summary)
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, JsonlError> {
        let mut lines = jsonl::records::<TraceLine, _>(r);
        let (line_no, first) = lines.next().ok_or(JsonlError::Empty)??;
        let TraceLine::Header(header) = first else {
            return Err(JsonlError::invalid(
                line_no,
                "first line must be a trace header",
            ));
        };
        let mut events = Vec::new();
        let mut summary = None;
        for item in lines {
            let (line_no, rec) = item?;
            if summary.is_some() {
                return Err(JsonlError::invalid(line_no, "record after trace summary"));
            }
            match rec {
                TraceLine::Header(_) => {
                    return Err(JsonlError::invalid(line_no, "duplicate trace header"))
                }
                TraceLine::Summary(s) => summary = Some(s),
                other => events.push(other.into_event().expect("non-header, non-summary")),
            }
        }
        let s = summary.ok_or_else(|| JsonlError::invalid(0, "trace has no summary line"))?;
        Ok(TurnTrace {
            scenario_id: header.scenario_id,
            mode: header.mode,
            config: header.config,
            preamble: header.preamble,
            events,
            interrupted_at: s.interrupted_at,
            t_interrupt: s.t_interrupt,
            undelivered_overlap: s.undelivered_overlap,
            post_turn_tokens: s.post_turn_tokens,
            status: s.status,
            error: s.error,
        })
    }

    pub fn from_jsonl_str(s: &str) -> Result<Self, JsonlError> {
        Self::read_jsonl(s.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub scenario_id: String,
    pub mode: Mode,
    pub config: SessionConfig,
    pub preamble: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub interrupted_at: Option<usize>,
    pub t_interrupt: Option<f64>,
    pub undelivered_overlap: Option<SpeechChunk>,
    pub post_turn_tokens: usize,
    pub status: TraceStatus,
    pub error: Option<String>,
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    ChunkDelivered {
        time: f64,
        chunk: SpeechChunk,
    },
    ThinkingGenerated {
        start_time: f64,
        chunk: ThinkingChunk,
    },
    ToolExchange {
        time: f64,
        thinking_index: usize,
        call: ToolCall,
        outcome: MatchOutcome,
    },
    ContextRebuilt {
        time: f64,
    },
    ResponseEmitted {
        response: ResponseChunk,
    },
    Summary(TraceSummary),
}

impl From<TraceEvent> for TraceLine {
    fn from(e: TraceEvent) -> Self {
        match e {
            TraceEvent::ChunkDelivered { time, chunk } => TraceLine::ChunkDelivered { time, chunk },
            TraceEvent::ThinkingGenerated { start_time, chunk } => {
                TraceLine::ThinkingGenerated { start_time, chunk }
            }
            TraceEvent::ToolExchange {
                time,
                thinking_index,
                call,
                outcome,
            } => TraceLine::ToolExchange {
                time,
                thinking_index,
                call,
                outcome,
            },
            TraceEvent::ContextRebuilt { time } => TraceLine::ContextRebuilt { time },
            TraceEvent::ResponseEmitted { response } => TraceLine::ResponseEmitted { response },
        }
    }
}

impl TraceLine {
    fn into_event(self) -> Option<TraceEvent> {
        Some(match self {
            TraceLine::ChunkDelivered { time, chunk } => TraceEvent::ChunkDelivered { time, chunk },
            TraceLine::ThinkingGenerated { start_time, chunk } => {
                TraceEvent::ThinkingGenerated { start_time, chunk }
            }
            TraceLine::ToolExchange {
                time,
                thinking_index,
                call,
                outcome,
            } => TraceEvent::ToolExchange {
                time,
                thinking_index,
                call,
                outcome,
            },
            TraceLine::ContextRebuilt { time } => TraceEvent::ContextRebuilt { time },
            TraceLine::ResponseEmitted { response } => TraceEvent::ResponseEmitted { response },
            TraceLine::Header(_) | TraceLine::Summary(_) => return None,
        })
    }
}
