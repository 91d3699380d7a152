//! Structural invariants of a finished trace.

use super::build_context;
use crate::timeline::thinking_budget;
use crate::tokens::{EOA, EOPA, INTERRUPT, THINK_CLOSE, THINK_OPEN, TOOL_CALL_CLOSE};
use crate::trace::{Mode, ThinkingChunk, TraceEvent, TraceStatus, TurnTrace};

const EPS: f64 = 1e-9;

/// Returns one message per violated invariant; empty means the trace is
/// well formed.
pub fn check_trace(trace: &TurnTrace) -> Vec<String> {
    let mut v = Vec::new();
    let cfg = &trace.config.chunking;
    let t = cfg.t_chunk;
    let budget = thinking_budget(cfg);

    for chunk in trace.thinking_chunks() {
        check_block(chunk, &mut v);
    }
    if trace.interrupted_at.is_some() != trace.t_interrupt.is_some() {
        v.push("t_interrupt must be set exactly when interrupted_at is".into());
    }

    let complete = trace.status == TraceStatus::Completed;
    if complete
        && !matches!(
            trace.events.last(),
            Some(TraceEvent::ResponseEmitted { .. })
        )
    {
        v.push("completed trace does not end with a response".into());
    }

    let ctx = build_context(&trace.preamble, &trace.events);
    let count = |m: &str| ctx.iter().filter(|t| *t == m).count();
    let finals = trace.delivered_chunks().filter(|c| c.is_final).count();
    let partials = trace.delivered_chunks().filter(|c| !c.is_final).count();
    if finals > 1 {
        v.push(format!("{finals} chunks marked final"));
    }
    // A combined-mode rebuild drops the partial markers on purpose.
    if trace.mode != Mode::Combined && count(EOPA) != partials {
        v.push(format!(
            "{} [EOPA] markers in context for {partials} partial chunks",
            count(EOPA)
        ));
    }
    if count(EOA) != finals {
        v.push(format!(
            "{} [EOA] markers for {finals} final chunks",
            count(EOA)
        ));
    }
    if complete && trace.interrupted_at.is_none() && finals != 1 {
        v.push("completed uninterrupted trace must deliver [EOA] exactly once".into());
    }
    if trace.interrupted_at.is_some() && finals != 0 {
        v.push("interrupted trace delivered the final chunk".into());
    }

    if trace.mode == Mode::CallAfterListen {
        return v;
    }

    // Alternation, indices and the virtual clock.
    let mut expect_delivery = true;
    let mut next_index = 1usize;
    let mut last_delivery = 0.0;
    let mut last_thinking: Option<&ThinkingChunk> = None;
    let mut final_seen = false;
    for event in &trace.events {
        match event {
            TraceEvent::ChunkDelivered { time, chunk } => {
                if !expect_delivery {
                    v.push(format!(
                        "S_{} delivered before R_{} was generated",
                        chunk.index,
                        next_index - 1
                    ));
                }
                if chunk.index != next_index {
                    v.push(format!("expected S_{next_index}, got S_{}", chunk.index));
                }
                let due = chunk.index as f64 * t;
                if (time - due).abs() > EPS {
                    v.push(format!(
                        "S_{} delivered at {time}, expected {due}",
                        chunk.index
                    ));
                }
                last_delivery = *time;
                final_seen = chunk.is_final;
                expect_delivery = false;
            }
            TraceEvent::ThinkingGenerated { start_time, chunk } => {
                if expect_delivery {
                    v.push(format!(
                        "R_{} generated without a preceding chunk",
                        chunk.index
                    ));
                }
                if chunk.index != next_index {
                    v.push(format!("expected R_{next_index}, got R_{}", chunk.index));
                }
                if (start_time - last_delivery).abs() > EPS {
                    v.push(format!(
                        "R_{} starts at {start_time}, before its chunk arrived at {last_delivery}",
                        chunk.index
                    ));
                }
                let limit = if final_seen {
                    cfg.final_budget
                } else {
                    Some(budget)
                };
                if let Some(b) = limit {
                    let n = chunk.self_generated();
                    if n > b + 2 {
                        v.push(format!(
                            "R_{} has {n} own tokens, over {b} + 2",
                            chunk.index
                        ));
                    }
                    if chunk.truncated && n != b + 2 {
                        v.push(format!("R_{} truncated below its budget", chunk.index));
                    }
                    if !chunk.truncated && n > b + 1 {
                        v.push(format!(
                            "R_{} filled its budget but is not marked truncated",
                            chunk.index
                        ));
                    }
                }
                last_thinking = Some(chunk);
                next_index += 1;
                expect_delivery = true;
            }
            TraceEvent::ToolExchange { time, outcome, .. } => {
                if let Some(eoa) = trace.eoa_time() {
                    let early = *time < eoa;
                    if early != (outcome.phase == crate::tool_runtime::Phase::Early) {
                        v.push(format!("tool exchange at {time} has the wrong phase"));
                    }
                }
            }
            TraceEvent::ContextRebuilt { .. } | TraceEvent::ResponseEmitted { .. } => {}
        }
    }

    match (trace.interrupted_at, last_thinking) {
        (Some(k), Some(r)) => {
            if trace.delivered_chunks().any(|c| c.index > k) {
                v.push(format!("a chunk after S_{k} was delivered"));
            }
            if r.index != k || !r.contains_interrupt {
                v.push(format!("R_{k} is not the interrupting block"));
            }
            if let Some(ti) = trace.t_interrupt {
                let expected = k as f64 * t + (r.self_generated() + 1) as f64 / cfg.n_tps;
                if (ti - expected).abs() > EPS {
                    v.push(format!("t_interrupt {ti}, expected {expected}"));
                }
            }
            if let Some(o) = &trace.undelivered_overlap {
                if o.index != k + 1 {
                    v.push(format!("overlap is S_{}, expected S_{}", o.index, k + 1));
                }
            }
            if trace.post_turn_tokens != 0 {
                v.push("interrupted trace counts post-turn tokens".into());
            }
        }
        (None, Some(r)) if complete => {
            let o = trace.response().map_or(0, |r| r.tokens.len());
            if trace.post_turn_tokens != r.self_generated() + o {
                v.push(format!(
                    "post_turn_tokens {} != {} + {o}",
                    trace.post_turn_tokens,
                    r.self_generated()
                ));
            }
            if let Some(resp) = trace.response() {
                let expected = last_delivery + (r.self_generated() + 1) as f64 / cfg.n_tps;
                if (resp.emit_time - expected).abs() > EPS {
                    v.push(format!(
                        "response emitted at {}, expected {expected}",
                        resp.emit_time
                    ));
                }
            }
        }
        (Some(_), None) => v.push("interrupted trace has no thinking".into()),
        _ => {}
    }
    v
}

fn check_block(chunk: &ThinkingChunk, v: &mut Vec<String>) {
    let i = chunk.index;
    if chunk.tokens.first().map(String::as_str) != Some(THINK_OPEN) {
        v.push(format!("R_{i} does not open with {THINK_OPEN}"));
    }
    if !chunk.is_closed() {
        v.push(format!("R_{i} does not close with {THINK_CLOSE}"));
    }
    if chunk.contains_interrupt != chunk.tokens.iter().any(|t| t == INTERRUPT) {
        v.push(format!(
            "R_{i} contains_interrupt disagrees with its tokens"
        ));
    }
    let injected: usize = chunk.injections.iter().map(|j| j.len).sum();
    if injected != chunk.injected_tool_tokens {
        v.push(format!(
            "R_{i} injection lengths do not sum to injected_tool_tokens"
        ));
    }
    for inj in &chunk.injections {
        let ok = inj.offset > 0
            && inj.offset + inj.len <= chunk.tokens.len()
            && chunk.tokens[inj.offset - 1] == TOOL_CALL_CLOSE;
        if !ok {
            v.push(format!(
                "R_{i} has an injection not placed after a call span"
            ));
        }
    }
}
