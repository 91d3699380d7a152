//! Chunking and budget arithmetic.
//!
//! A transcript is a list of timed words. It is cut into fixed-duration
//! speech chunks; a word belongs to the chunk in which it *ends*, so chunk
//! `i` holds the words with `end ∈ ((i-1)·t_chunk, i·t_chunk]`. The last chunk
//! may be shorter and ends at the last word's end timestamp.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("word {index} ({text:?}): end {end} must be greater than start {start}")]
    EmptyWord {
        index: usize,
        text: String,
        start: f64,
        end: f64,
    },
    #[error("word {index} ({text:?}): timestamps must be finite and non-negative")]
    BadTimestamp { index: usize, text: String },
    #[error("word {index} starts at {start} before the previous word ends at {prev_end}")]
    Overlap {
        index: usize,
        start: f64,
        prev_end: f64,
    },
    #[error("invalid chunking config: {0}")]
    Config(String),
}

/// One word of a timestamped transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordTiming {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl WordTiming {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            text: text.into(),
            start,
            end,
        }
    }
}

/// Chunk duration, generation rate and context limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkingConfig {
    /// Chunk duration in seconds.
    pub t_chunk: f64,
    /// Tokens the model generates per second.
    pub n_tps: f64,
    pub max_context: usize,
    /// Budget for the thinking block generated after the user has finished.
    /// `None` means unbounded (limited only by `max_context`).
    #[serde(default)]
    pub final_budget: Option<usize>,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            t_chunk: 4.0,
            n_tps: 80.0,
            max_context: 32_768,
            final_budget: None,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), TimelineError> {
        if !(self.t_chunk.is_finite() && self.t_chunk > 0.0) {
            return Err(TimelineError::Config(format!(
                "t_chunk must be > 0, got {}",
                self.t_chunk
            )));
        }
        if !(self.n_tps.is_finite() && self.n_tps >= 0.0) {
            return Err(TimelineError::Config(format!(
                "n_tps must be >= 0, got {}",
                self.n_tps
            )));
        }
        if self.max_context == 0 {
            return Err(TimelineError::Config("max_context must be > 0".into()));
        }
        Ok(())
    }

    /// Index (1-based) of the chunk that covers time `t`, using the
    /// half-open-left membership `((i-1)·t_chunk, i·t_chunk]`. Time zero maps
    /// to chunk 1.
    pub fn chunk_index_at(&self, t: f64) -> usize {
        let raw = (t / self.t_chunk).ceil();
        if raw < 1.0 {
            1
        } else {
            raw as usize
        }
    }

    /// Start of chunk `index` (1-based) on the virtual clock, which is also
    /// the delivery time of chunk `index - 1`.
    pub fn boundary(&self, index: usize) -> f64 {
        index as f64 * self.t_chunk
    }
}

/// A fixed-duration slice of the user's transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechChunk {
    /// 1-based position in the turn.
    pub index: usize,
    pub span_start: f64,
    pub span_end: f64,
    pub words: Vec<WordTiming>,
    pub is_final: bool,
}

impl SpeechChunk {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.text.as_str())
    }
}

/// Checks ordering and per-word timestamp validity.
pub fn validate_words(words: &[WordTiming]) -> Result<(), TimelineError> {
    let mut prev_end: Option<f64> = None;
    for (index, w) in words.iter().enumerate() {
        if !(w.start.is_finite() && w.end.is_finite() && w.start >= 0.0) {
            return Err(TimelineError::BadTimestamp {
                index,
                text: w.text.clone(),
            });
        }
        if w.end <= w.start {
            return Err(TimelineError::EmptyWord {
                index,
                text: w.text.clone(),
                start: w.start,
                end: w.end,
            });
        }
        if let Some(prev_end) = prev_end {
            if w.start < prev_end {
                return Err(TimelineError::Overlap {
                    index,
                    start: w.start,
                    prev_end,
                });
            }
        }
        prev_end = Some(w.end);
    }
    Ok(())
}

/// Splits a timestamped transcript into speech chunks.
///
/// Chunks with no words (silences longer than a chunk) are still emitted so
/// that chunk indices stay aligned with the clock.
pub fn segment_transcript(
    words: &[WordTiming],
    config: &ChunkingConfig,
) -> Result<Vec<SpeechChunk>, TimelineError> {
    config.validate()?;
    validate_words(words)?;
    let Some(last) = words.last() else {
        return Ok(Vec::new());
    };
    let n = config.chunk_index_at(last.end);
    let mut chunks: Vec<SpeechChunk> = (1..=n)
        .map(|index| SpeechChunk {
            index,
            span_start: config.boundary(index - 1),
            span_end: if index == n {
                last.end
            } else {
                config.boundary(index)
            },
            words: Vec::new(),
            is_final: index == n,
        })
        .collect();
    for w in words {
        let i = config.chunk_index_at(w.end);
        chunks[i - 1].words.push(w.clone());
    }
    Ok(chunks)
}

/// Maximum number of thinking tokens that fit in one chunk duration.
pub fn thinking_budget(config: &ChunkingConfig) -> usize {
    let product = config.t_chunk * config.n_tps;
    if product.is_finite() && product > 0.0 {
        product.floor() as usize
    } else {
        0
    }
}
