use crate::timeline::SpeechChunk;
use crate::tokens::{tokenize, EOA, EOPA};
use crate::trace::TraceEvent;

/// Transcript tokens of one speech chunk, without its trailing marker.
pub fn chunk_tokens(chunk: &SpeechChunk) -> Vec<String> {
    chunk.texts().flat_map(tokenize).collect()
}

/// Chunk tokens followed by `[EOA]` (final) or `[EOPA]`.
pub fn delivered_tokens(chunk: &SpeechChunk) -> Vec<String> {
    let mut out = chunk_tokens(chunk);
    out.push(if chunk.is_final { EOA } else { EOPA }.to_string());
    out
}

/// The model context implied by a trace prefix: the preamble, then every
/// delivered chunk and thinking block in event order. A `ContextRebuilt`
/// event resets it to the preamble plus the bare transcript delivered so far.
pub fn build_context(preamble: &[String], events: &[TraceEvent]) -> Vec<String> {
    let mut ctx = preamble.to_vec();
    let mut delivered: Vec<&SpeechChunk> = Vec::new();
    for event in events {
        match event {
            TraceEvent::ChunkDelivered { chunk, .. } => {
                ctx.extend(delivered_tokens(chunk));
                delivered.push(chunk);
            }
            TraceEvent::ThinkingGenerated { chunk, .. } => ctx.extend(chunk.tokens.iter().cloned()),
            TraceEvent::ContextRebuilt { .. } => {
                ctx = preamble.to_vec();
                for c in &delivered {
                    ctx.extend(chunk_tokens(c));
                }
            }
            TraceEvent::ResponseEmitted { response } => ctx.extend(response.tokens.iter().cloned()),
            TraceEvent::ToolExchange { .. } => {}
        }
    }
    ctx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::WordTiming;
    use crate::trace::ThinkingChunk;

    fn chunk(index: usize, words: &[&str], is_final: bool) -> SpeechChunk {
        SpeechChunk {
            index,
            span_start: 0.0,
            span_end: 1.0,
            words: words
                .iter()
                .map(|w| WordTiming::new(*w, 0.0, 0.5))
                .collect(),
            is_final,
        }
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn single_final_chunk() {
        let ev = [TraceEvent::ChunkDelivered {
            time: 4.0,
            chunk: chunk(1, &["hi", "there"], true),
        }];
        assert_eq!(build_context(&[], &ev), toks(&["hi", "there", "[EOA]"]));
    }

    #[test]
    fn interleaving() {
        let ev = [
            TraceEvent::ChunkDelivered {
                time: 4.0,
                chunk: chunk(1, &["a", "b"], false),
            },
            TraceEvent::ThinkingGenerated {
                start_time: 4.0,
                chunk: ThinkingChunk::new(1, toks(&["<think>", "x", "</think>"])),
            },
            TraceEvent::ChunkDelivered {
                time: 8.0,
                chunk: chunk(2, &["c"], false),
            },
        ];
        assert_eq!(
            build_context(&[], &ev),
            toks(&["a", "b", "[EOPA]", "<think>", "x", "</think>", "c", "[EOPA]"])
        );
    }

    #[test]
    fn empty_prefix_is_preamble() {
        assert!(build_context(&[], &[]).is_empty());
        let pre = toks(&["sys"]);
        assert_eq!(build_context(&pre, &[]), pre);
    }

    #[test]
    fn rebuild_drops_markers_and_thinking() {
        let ev = [
            TraceEvent::ChunkDelivered {
                time: 4.0,
                chunk: chunk(1, &["a"], false),
            },
            TraceEvent::ThinkingGenerated {
                start_time: 4.0,
                chunk: ThinkingChunk::new(1, toks(&["<think>", "x", "</think>"])),
            },
            TraceEvent::ContextRebuilt { time: 8.0 },
            TraceEvent::ChunkDelivered {
                time: 8.0,
                chunk: chunk(2, &["b"], true),
            },
        ];
        assert_eq!(
            build_context(&toks(&["sys"]), &ev),
            toks(&["sys", "a", "b", "[EOA]"])
        );
    }
}
