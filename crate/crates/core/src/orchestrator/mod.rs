//! The turn state machine on a virtual clock.
//!
//! Speech chunk `S_i` is delivered at `i·t_chunk`; the thinking block `R_i`
//! starts at the same instant and its `j`-th self-generated token (opening
//! marker = 1) is emitted at `start + j/n_tps`. Tool exchanges and chunk
//! delivery take no virtual time.

mod check;
mod context;

pub use check::check_trace;
pub use context::{build_context, chunk_tokens, delivered_tokens};

use thiserror::Error;

use crate::backend::{apply_stop_rules, Backend, BackendError, GenerationRequest};
use crate::scenario_io::Scenario;
use crate::timeline::{segment_transcript, thinking_budget, SpeechChunk};
use crate::tokens::{INTERRUPT, THINK_CLOSE, THINK_OPEN, TOOL_CALL_CLOSE, TOOL_CALL_OPEN};
use crate::tool_runtime::{match_call, parse_span, tool_payload_tokens, ToolEnvironment};
use crate::trace::{
    Injection, Mode, ResponseChunk, SessionConfig, ThinkingChunk, TraceEvent, TraceStatus,
    TurnTrace,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("backend failed at generation step {step}: {source}")]
    Backend {
        step: usize,
        source: BackendError,
        trace: Box<TurnTrace>,
    },
    #[error("thinking block {index} needed more than {cap} generation calls")]
    IterationCapExceeded {
        index: usize,
        cap: usize,
        trace: Box<TurnTrace>,
    },
}

impl RunError {
    /// The partial trace recorded up to the failure, if the session started.
    pub fn trace(&self) -> Option<&TurnTrace> {
        match self {
            RunError::Backend { trace, .. } | RunError::IterationCapExceeded { trace, .. } => {
                Some(trace)
            }
            _ => None,
        }
    }
}

/// Runs one turn in `mode`.
pub fn run(
    mode: Mode,
    scenario: &Scenario,
    backend: &dyn Backend,
    env: &mut ToolEnvironment,
    config: &SessionConfig,
) -> Result<TurnTrace, RunError> {
    match mode {
        Mode::Shanks => run_shanks(scenario, backend, env, config),
        Mode::CallAfterListen => run_call_after_listen(scenario, backend, env, config),
        Mode::Combined => run_combined(scenario, backend, env, config),
    }
}

/// Thinks while listening: alternates chunk delivery and budgeted thinking.
pub fn run_shanks(
    scenario: &Scenario,
    backend: &dyn Backend,
    env: &mut ToolEnvironment,
    config: &SessionConfig,
) -> Result<TurnTrace, RunError> {
    let chunks = prepare(scenario, config)?;
    let mut s = Session::new(Mode::Shanks, scenario, backend, env, config);
    let halt = s.listen(&chunks, false).err();
    s.finish(halt)
}

/// Waits for the whole turn, then calls tools and answers.
pub fn run_call_after_listen(
    scenario: &Scenario,
    backend: &dyn Backend,
    env: &mut ToolEnvironment,
    config: &SessionConfig,
) -> Result<TurnTrace, RunError> {
    prepare(scenario, config)?;
    let mut s = Session::new(Mode::CallAfterListen, scenario, backend, env, config);
    let halt = s.after_listen(scenario).err();
    s.finish(halt)
}

/// Thinks while listening, then continues from a rebuilt context holding the
/// full transcript and the successful calls made so far.
pub fn run_combined(
    scenario: &Scenario,
    backend: &dyn Backend,
    env: &mut ToolEnvironment,
    config: &SessionConfig,
) -> Result<TurnTrace, RunError> {
    let chunks = prepare(scenario, config)?;
    let mut s = Session::new(Mode::Combined, scenario, backend, env, config);
    let halt = s.listen(&chunks, true).err();
    s.finish(halt)
}

fn prepare(scenario: &Scenario, config: &SessionConfig) -> Result<Vec<SpeechChunk>, RunError> {
    let c = &config.chunking;
    c.validate().map_err(|e| RunError::Config(e.to_string()))?;
    if c.n_tps <= 0.0 {
        return Err(RunError::Config(
            "n_tps must be > 0 to place tokens on the clock".into(),
        ));
    }
    if config.iteration_cap == 0 {
        return Err(RunError::Config("iteration_cap must be > 0".into()));
    }
    if scenario.words.is_empty() {
        return Err(RunError::InvalidScenario(format!(
            "scenario {} has no words",
            scenario.id
        )));
    }
    segment_transcript(&scenario.words, c).map_err(|e| RunError::InvalidScenario(e.to_string()))
}

enum Halt {
    Overflow,
    Backend { step: usize, error: BackendError },
    IterationCap { index: usize },
}

struct Block {
    chunk: ThinkingChunk,
    /// Call spans with their payloads, for calls that consumed a ground-truth id.
    successes: Vec<Vec<String>>,
}

struct Session<'a> {
    mode: Mode,
    scenario_id: String,
    backend: &'a dyn Backend,
    env: &'a mut ToolEnvironment,
    config: &'a SessionConfig,
    preamble: Vec<String>,
    context: Vec<String>,
    events: Vec<TraceEvent>,
    step: usize,
    interrupted_at: Option<usize>,
    t_interrupt: Option<f64>,
    undelivered_overlap: Option<SpeechChunk>,
    post_turn_tokens: usize,
}

impl<'a> Session<'a> {
    fn new(
        mode: Mode,
        scenario: &Scenario,
        backend: &'a dyn Backend,
        env: &'a mut ToolEnvironment,
        config: &'a SessionConfig,
    ) -> Self {
        let preamble = scenario.preamble_tokens();
        Self {
            mode,
            scenario_id: scenario.id.clone(),
            backend,
            env,
            config,
            context: preamble.clone(),
            preamble,
            events: Vec::new(),
            step: 0,
            interrupted_at: None,
            t_interrupt: None,
            undelivered_overlap: None,
            post_turn_tokens: 0,
        }
    }

    fn n_tps(&self) -> f64 {
        self.config.chunking.n_tps
    }

    fn push_context(&mut self, tokens: &[String]) -> Result<(), Halt> {
        if self.context.len() + tokens.len() > self.config.chunking.max_context {
            return Err(Halt::Overflow);
        }
        self.context.extend_from_slice(tokens);
        Ok(())
    }

    fn room(&self) -> usize {
        self.config.chunking.max_context - self.context.len()
    }

    fn generate(&mut self, max_tokens: usize, stop: &[String]) -> Result<Vec<String>, Halt> {
        self.step += 1;
        let request = GenerationRequest {
            context: self.context.clone(),
            max_tokens,
            stop_markers: stop.to_vec(),
        };
        match self.backend.generate(self.step, &request) {
            // Re-apply the stop rules so a misbehaving backend cannot
            // overrun the budget or run past a stop marker.
            Ok(result) => Ok(apply_stop_rules(result.tokens, max_tokens, stop).tokens),
            Err(BackendError::ContextOverflow { .. }) => Err(Halt::Overflow),
            Err(error) => Err(Halt::Backend {
                step: self.step,
                error,
            }),
        }
    }

    fn deliver(&mut self, chunk: &SpeechChunk, time: f64) -> Result<(), Halt> {
        self.push_context(&delivered_tokens(chunk))?;
        self.events.push(TraceEvent::ChunkDelivered {
            time,
            chunk: chunk.clone(),
        });
        Ok(())
    }

    /// Generates one thinking block starting at virtual time `start`,
    /// resolving tool calls as they close. `budget` bounds the tokens after
    /// the opening marker; `carried` tokens are placed after the opening
    /// marker without counting against it.
    fn think(
        &mut self,
        index: usize,
        start: f64,
        budget: Option<usize>,
        eoa_time: f64,
        carried: Vec<String>,
    ) -> Result<Block, Halt> {
        let stop = vec![THINK_CLOSE.to_string(), TOOL_CALL_CLOSE.to_string()];
        let mut tokens = vec![THINK_OPEN.to_string()];
        self.push_context(&tokens)?;
        self.push_context(&carried)?;
        let carried_len = carried.len();
        tokens.extend(carried);

        let mut injections = Vec::new();
        let mut used = 0usize;
        let mut calls = 0usize;
        let mut scan_from = tokens.len();
        let mut successes = Vec::new();
        let mut closed = false;
        let truncated = loop {
            let remaining = budget.map_or(usize::MAX, |b| b.saturating_sub(used));
            if remaining == 0 {
                break true;
            }
            let room = self.room();
            if room == 0 {
                return Err(Halt::Overflow);
            }
            calls += 1;
            if calls > self.config.iteration_cap {
                return Err(Halt::IterationCap { index });
            }
            let max_tokens = remaining.min(room);
            let out = self.generate(max_tokens, &stop)?;
            self.push_context(&out)?;
            used += out.len();
            let produced = out.len();
            let last = out.last().cloned();
            tokens.extend(out);
            match last.as_deref() {
                Some(THINK_CLOSE) => {
                    closed = true;
                    break false;
                }
                Some(TOOL_CALL_CLOSE) => {
                    let close = tokens.len() - 1;
                    let open = tokens[scan_from..close]
                        .iter()
                        .rposition(|t| t == TOOL_CALL_OPEN)
                        .map(|p| p + scan_from);
                    scan_from = tokens.len();
                    let Some(call) = open.and_then(|o| parse_span(&tokens, o, close).ok()) else {
                        continue;
                    };
                    let now = start + (1 + used) as f64 / self.n_tps();
                    let outcome = match_call(&call, self.env, now, eoa_time);
                    let payload = tool_payload_tokens(&outcome.response_payload);
                    self.push_context(&payload)?;
                    if !outcome.is_error && !outcome.replayed {
                        let mut carried = tokens[call.raw_span.start..=close].to_vec();
                        carried.extend(payload.iter().cloned());
                        successes.push(carried);
                    }
                    injections.push(Injection {
                        offset: tokens.len(),
                        len: payload.len(),
                    });
                    tokens.extend(payload);
                    scan_from = tokens.len();
                    self.events.push(TraceEvent::ToolExchange {
                        time: now,
                        thinking_index: index,
                        call,
                        outcome,
                    });
                }
                _ => {
                    if budget.is_some_and(|b| used >= b) {
                        break true;
                    }
                    if produced == room {
                        return Err(Halt::Overflow);
                    }
                    break false;
                }
            }
        };
        if !closed {
            let close = [THINK_CLOSE.to_string()];
            self.push_context(&close)?;
            tokens.extend(close);
        }
        let injected = injections.iter().map(|i: &Injection| i.len).sum();
        let contains_interrupt = tokens.iter().any(|t| t == INTERRUPT);
        let chunk = ThinkingChunk {
            index,
            tokens,
            truncated,
            contains_interrupt,
            injected_tool_tokens: injected,
            injections,
            carried_tokens: carried_len,
        };
        self.events.push(TraceEvent::ThinkingGenerated {
            start_time: start,
            chunk: chunk.clone(),
        });
        Ok(Block { chunk, successes })
    }

    /// Generates the spoken response right after a thinking block that
    /// started at `start` and produced `self_tokens` timed tokens.
    fn respond(&mut self, start: f64, self_tokens: usize) -> Result<usize, Halt> {
        let room = self.room();
        if room == 0 {
            return Err(Halt::Overflow);
        }
        let tokens = self.generate(room, &[])?;
        self.push_context(&tokens)?;
        let n = tokens.len();
        self.events.push(TraceEvent::ResponseEmitted {
            response: ResponseChunk {
                tokens,
                emit_time: start + (self_tokens + 1) as f64 / self.n_tps(),
            },
        });
        Ok(n)
    }

    /// Chunk-by-chunk listening. With `rebuild`, the final chunk is
    /// delivered into a rebuilt context and thinking resumes with the
    /// successful calls carried over.
    fn listen(&mut self, chunks: &[SpeechChunk], rebuild: bool) -> Result<(), Halt> {
        let config = self.config;
        let cfg = &config.chunking;
        let t = cfg.t_chunk;
        let budget = thinking_budget(cfg);
        let final_budget = cfg.final_budget;
        let n = chunks.len();
        let eoa_time = n as f64 * t;
        let mut successes: Vec<Vec<String>> = Vec::new();
        for chunk in chunks {
            let i = chunk.index;
            let time = i as f64 * t;
            if chunk.is_final && rebuild {
                self.events.push(TraceEvent::ContextRebuilt { time });
                let mut ctx = self.preamble.clone();
                for c in self.delivered() {
                    ctx.extend(chunk_tokens(c));
                }
                self.context = ctx;
                if self.context.len() > cfg.max_context {
                    return Err(Halt::Overflow);
                }
            }
            self.deliver(chunk, time)?;
            if chunk.is_final {
                let carried = if rebuild {
                    std::mem::take(&mut successes).concat()
                } else {
                    Vec::new()
                };
                let block = self.think(i, time, final_budget, eoa_time, carried)?;
                let self_tokens = block.chunk.self_generated();
                let o = self.respond(time, self_tokens)?;
                self.post_turn_tokens = self_tokens + o;
                return Ok(());
            }
            let block = self.think(i, time, Some(budget), eoa_time, Vec::new())?;
            successes.extend(block.successes);
            if block.chunk.contains_interrupt {
                let self_tokens = block.chunk.self_generated();
                self.interrupted_at = Some(i);
                self.t_interrupt = Some(time + (self_tokens + 1) as f64 / self.n_tps());
                self.undelivered_overlap = chunks.get(i).cloned();
                self.respond(time, self_tokens)?;
                return Ok(());
            }
        }
        Ok(())
    }

    fn after_listen(&mut self, scenario: &Scenario) -> Result<(), Halt> {
        let duration = scenario.duration();
        let whole = SpeechChunk {
            index: 1,
            span_start: 0.0,
            span_end: duration,
            words: scenario.words.clone(),
            is_final: true,
        };
        self.deliver(&whole, duration)?;
        let block = self.think(
            1,
            duration,
            self.config.chunking.final_budget,
            duration,
            Vec::new(),
        )?;
        let self_tokens = block.chunk.self_generated();
        let o = self.respond(duration, self_tokens)?;
        self.post_turn_tokens = self_tokens + o;
        Ok(())
    }

    fn delivered(&self) -> impl Iterator<Item = &SpeechChunk> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ChunkDelivered { chunk, .. } => Some(chunk),
            _ => None,
        })
    }

    fn finish(self, halt: Option<Halt>) -> Result<TurnTrace, RunError> {
        let mut trace = TurnTrace {
            scenario_id: self.scenario_id,
            mode: self.mode,
            config: self.config.clone(),
            preamble: self.preamble,
            events: self.events,
            interrupted_at: self.interrupted_at,
            t_interrupt: self.t_interrupt,
            undelivered_overlap: self.undelivered_overlap,
            post_turn_tokens: self.post_turn_tokens,
            status: TraceStatus::Completed,
            error: None,
        };
        match halt {
            None => Ok(trace),
            Some(Halt::Overflow) => {
                trace.status = TraceStatus::ContextOverflow;
                Ok(trace)
            }
            Some(Halt::Backend { step, error }) => {
                trace.status = TraceStatus::Aborted;
                trace.error = Some(error.to_string());
                Err(RunError::Backend {
                    step,
                    source: error,
                    trace: Box::new(trace),
                })
            }
            Some(Halt::IterationCap { index }) => {
                let cap = trace.config.iteration_cap;
                trace.status = TraceStatus::Aborted;
                trace.error = Some(format!(
                    "thinking block {index} needed more than {cap} generation calls"
                ));
                Err(RunError::IterationCapExceeded {
                    index,
                    cap,
                    trace: Box::new(trace),
                })
            }
        }
    }
}
