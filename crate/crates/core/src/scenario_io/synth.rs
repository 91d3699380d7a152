//! Seeded synthetic scenarios with matching scripts and a planted answer key.
//!
//! The script is built alongside a model of how the orchestrator will consume
//! it (one generation step per call span or block ending), so the expected
//! trace quantities fall out of the construction rather than a second
//! simulation.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Scenario, Task};
use crate::backend::ScriptEntry;
use crate::metrics::{InterruptLabel, QualityScore};
use crate::timeline::{thinking_budget, ChunkingConfig, WordTiming};
use crate::tokens::{tokenize, INTERRUPT, THINK_CLOSE};
use crate::tool_runtime::{
    annotate_earliest_times, render_tool_call, GroundTruthCall, ParamSpec, ToolSpec, ValueSource,
};
use crate::trace::Mode;

const VOCAB: &[&str] = &[
    "apple", "river", "seven", "blue", "train", "twelve", "window", "market", "pencil", "forty",
    "green", "monday", "station", "coffee", "eleven", "garden", "ticket", "north", "silver",
    "morning", "three", "bridge", "yellow", "ninety", "hotel", "flight", "dinner", "summer",
];

const FILLER: &[&str] = &[
    "so", "the", "user", "wants", "maybe", "check", "then", "likely", "next", "compute", "first",
    "they", "said", "value", "step", "hmm",
];

const TOOL_NAMES: &[&str] = &[
    "Search_Flights",
    "Get_Weather",
    "Book_Hotel",
    "Convert_Currency",
    "Find_Route",
    "Lookup_Price",
    "Get_Schedule",
    "Check_Availability",
];

/// Where the scripted model interrupts, for interruption scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptPlan {
    /// Half the time, at a uniformly chosen non-final chunk.
    Random,
    Never,
    /// In thinking chunk `k`; ignored if `k` is not a non-final chunk.
    At(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub task: Task,
    pub mode: Mode,
    pub n_words: usize,
    pub duration: f64,
    pub n_calls: usize,
    /// Calls the script gets wrong and never retries.
    pub n_failed: usize,
    pub chunking: ChunkingConfig,
    pub interrupt: InterruptPlan,
}

impl SyntheticParams {
    /// Interruption items: 49.25 s turns, the mean length of the spoken math
    /// set the defaults are modelled on.
    pub fn interrupt() -> Self {
        Self {
            task: Task::Interrupt,
            mode: Mode::Shanks,
            n_words: 120,
            duration: 49.25,
            n_calls: 0,
            n_failed: 0,
            chunking: ChunkingConfig::default(),
            interrupt: InterruptPlan::Random,
        }
    }

    /// Tool-use items: 18.71 s turns.
    pub fn tool_call() -> Self {
        Self {
            task: Task::ToolCall,
            mode: Mode::Shanks,
            n_words: 45,
            duration: 18.71,
            n_calls: 3,
            n_failed: 0,
            chunking: ChunkingConfig::default(),
            interrupt: InterruptPlan::Never,
        }
    }

    fn validate(&self) -> Result<(), String> {
        self.chunking.validate().map_err(|e| e.to_string())?;
        if self.chunking.n_tps <= 0.0 {
            return Err("n_tps must be > 0".into());
        }
        if self.n_words == 0 {
            return Err("n_words must be > 0".into());
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err("duration must be > 0".into());
        }
        if self.duration / (self.n_words as f64) < 0.01 {
            return Err("words would be shorter than 10 ms".into());
        }
        if self.n_failed > self.n_calls {
            return Err("n_failed cannot exceed n_calls".into());
        }
        if self.task == Task::ToolCall && self.n_calls == 0 {
            return Err("tool_call scenarios need n_calls > 0".into());
        }
        Ok(())
    }
}

/// What a run of the generated script must produce, absent context overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub chunks: usize,
    pub interrupted_at: Option<usize>,
    pub t_interrupt: Option<f64>,
    pub post_turn_tokens: usize,
    pub early_hits: usize,
    pub late_hits: usize,
    pub success: bool,
    /// Verdict the default interruption judge should reach.
    pub valid_interrupt: Option<bool>,
    /// Score the default quality judge should give.
    pub quality: Option<QualityScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub scenario: Scenario,
    pub script: Vec<ScriptEntry>,
    pub expected: Expectation,
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

fn make_words(rng: &mut ChaCha8Rng, n: usize, duration: f64) -> Vec<WordTiming> {
    let slot = duration / n as f64;
    (0..n)
        .map(|i| {
            let start = round_ms(i as f64 * slot + rng.random_range(0.0..0.3) * slot);
            let end = if i + 1 == n {
                duration
            } else {
                round_ms((i + 1) as f64 * slot - rng.random_range(0.0..0.3) * slot)
            };
            let text = *VOCAB.choose(rng).expect("vocabulary is non-empty");
            WordTiming::new(text, start, end)
        })
        .collect()
}

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| FILLER.choose(rng).expect("filler is non-empty").to_string())
        .collect()
}

struct ScriptBuilder {
    entries: Vec<ScriptEntry>,
}

impl ScriptBuilder {
    fn push(&mut self, tokens: Vec<String>) {
        let step = self.entries.len() + 1;
        self.entries.push(ScriptEntry { step, tokens });
    }
}

pub fn generate_synthetic(seed: u64, params: &SyntheticParams) -> Result<SyntheticCase, String> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = make_words(&mut rng, params.n_words, params.duration);
    let cfg = &params.chunking;
    let n_chunks = cfg.chunk_index_at(params.duration);
    match params.task {
        Task::Interrupt => Ok(interrupt_case(seed, params, words, n_chunks, &mut rng)),
        Task::ToolCall => tool_case(seed, params, words, n_chunks, &mut rng),
    }
}

fn interrupt_case(
    seed: u64,
    params: &SyntheticParams,
    words: Vec<WordTiming>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> SyntheticCase {
    let cfg = &params.chunking;
    let t = cfg.t_chunk;
    let b = thinking_budget(cfg);
    let id = format!("synth-int-{seed}");
    let listening = params.mode != Mode::CallAfterListen;

    let k = match params.interrupt {
        _ if !listening || n < 2 || b == 0 => None,
        InterruptPlan::Never => None,
        InterruptPlan::At(k) => (1..n).contains(&k).then_some(k),
        InterruptPlan::Random => rng.random_bool(0.5).then(|| rng.random_range(1..n)),
    };
    let label = if rng.random_bool(0.5) {
        InterruptLabel::wrong(&id, round_ms(rng.random_range(0.0..params.duration)))
    } else {
        InterruptLabel::correct(&id)
    };

    let mut script = ScriptBuilder {
        entries: Vec::new(),
    };
    let mut expected = Expectation {
        chunks: n,
        interrupted_at: k,
        t_interrupt: None,
        post_turn_tokens: 0,
        early_hits: 0,
        late_hits: 0,
        success: false,
        valid_interrupt: None,
        quality: None,
    };

    let pre_final = if listening { n - 1 } else { 0 };
    for i in 1..=pre_final {
        if Some(i) == k {
            // Interrupt within budget so the marker survives truncation.
            let len = rng.random_range(2..=b.max(2)).min(b);
            let mut toks = filler(rng, len.saturating_sub(2));
            let at = rng.random_range(0..=toks.len());
            toks.insert(at, INTERRUPT.to_string());
            toks.push(THINK_CLOSE.to_string());
            let own = 1 + toks.len();
            expected.t_interrupt = Some(i as f64 * t + (own + 1) as f64 / cfg.n_tps);
            script.push(toks);
            // The response conditions on the prefix; repeat a word the user
            // said so the grounded judge accepts it.
            let heard: Vec<&WordTiming> = words
                .iter()
                .filter(|w| w.end <= (i + 1) as f64 * t)
                .collect();
            let response = match heard.choose(rng) {
                Some(w) => tokenize(&format!("Wait, did you mean {} ?", w.text)),
                None => tokenize("Sorry, could you go on ?"),
            };
            expected.valid_interrupt = Some(!heard.is_empty());
            script.push(response);
            return finish_interrupt(id, words, label, script, expected);
        }
        // A zero budget closes the block without asking the model.
        if b > 0 {
            let len = rng.random_range(0..=b + b / 4);
            let mut toks = filler(rng, len);
            toks.push(THINK_CLOSE.to_string());
            script.push(toks);
        }
    }
    let len = rng.random_range(0..=b.max(8));
    let mut toks = filler(rng, len);
    toks.push(THINK_CLOSE.to_string());
    let own = 1 + toks.len();
    script.push(toks);
    let response = tokenize("The answer is forty two .");
    expected.post_turn_tokens = own + response.len();
    script.push(response);
    finish_interrupt(id, words, label, script, expected)
}

fn finish_interrupt(
    id: String,
    words: Vec<WordTiming>,
    label: InterruptLabel,
    script: ScriptBuilder,
    expected: Expectation,
) -> SyntheticCase {
    SyntheticCase {
        scenario: Scenario {
            id,
            task: Task::Interrupt,
            words,
            tools: Vec::new(),
            ground_truth_calls: Vec::new(),
            label: Some(label),
            system_preamble: None,
        },
        script: script.entries,
        expected,
    }
}

/// One planned call: where it goes and what the script writes.
struct Planned {
    /// Thinking chunk index, or `None` for the block after the turn ends.
    chunk: Option<usize>,
    filler: usize,
    span: Vec<String>,
    succeeds: bool,
}

fn tool_case(
    seed: u64,
    params: &SyntheticParams,
    words: Vec<WordTiming>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticCase, String> {
    let cfg = &params.chunking;
    let t = cfg.t_chunk;
    let b = thinking_budget(cfg);
    let id = format!("synth-tool-{seed}");

    // Ground truth: call `c` takes one spoken word and, sometimes, the
    // result of an earlier call.
    let mut calls: Vec<GroundTruthCall> = Vec::new();
    let mut results: Vec<String> = Vec::new();
    for c in 0..params.n_calls {
        let call_id = c as u32 + 1;
        let pos = rng.random_range(0..words.len());
        let mut arguments = BTreeMap::new();
        let mut value_spans = BTreeMap::new();
        arguments.insert("q".to_string(), Value::String(words[pos].text.clone()));
        value_spans.insert("q".to_string(), ValueSource::Span([pos, pos]));
        let mut depends_on = std::collections::BTreeSet::new();
        if c > 0 && rng.random_bool(0.3) {
            let dep = rng.random_range(0..c);
            depends_on.insert(dep as u32 + 1);
            arguments.insert("ref".to_string(), Value::String(results[dep].clone()));
            value_spans.insert("ref".to_string(), ValueSource::Dependency);
        }
        let result = format!("V{call_id}x{}", rng.random_range(1000..10000));
        calls.push(GroundTruthCall {
            id: call_id,
            name: tool_name(c),
            arguments,
            response: json!({ "result": result }).to_string(),
            depends_on,
            earliest_time: None,
            answer_key: Some("result".into()),
            value_spans,
        });
        results.push(result);
    }
    annotate_earliest_times(&mut calls, &words).map_err(|e| e.to_string())?;

    let mut failed = vec![false; calls.len()];
    let mut ids: Vec<usize> = (0..calls.len()).collect();
    for _ in 0..params.n_failed {
        let j = rng.random_range(0..ids.len());
        failed[ids.swap_remove(j)] = true;
    }

    // Place calls in id order (dependencies point to lower ids), never
    // before they are callable, keeping each pre-final block inside its
    // budget and each exchange strictly before the next chunk boundary.
    let listening = params.mode != Mode::CallAfterListen;
    let mut planned = Vec::new();
    let mut cur = 1usize;
    let mut used = 0usize;
    for (c, gt) in calls.iter().enumerate() {
        let mut args = gt.arguments.clone();
        if failed[c] {
            args.insert("q".into(), Value::String("zzz_wrong".into()));
        }
        let span = render_tool_call(&gt.name, &args);
        let fill = rng.random_range(0..4);
        let cost = fill + span.len();
        let earliest = cfg.chunk_index_at(gt.earliest_time.unwrap_or(0.0));
        if earliest > cur {
            cur = earliest;
            used = 0;
        }
        let chunk = loop {
            if !listening || cur >= n {
                break None;
            }
            let fits = used + cost < b && ((1 + used + cost) as f64) / cfg.n_tps < t;
            if fits {
                used += cost;
                break Some(cur);
            }
            cur += 1;
            used = 0;
        };
        planned.push(Planned {
            chunk,
            filler: fill,
            span,
            succeeds: !failed[c],
        });
    }

    let mut script = ScriptBuilder {
        entries: Vec::new(),
    };
    if listening && b > 0 {
        for i in 1..n {
            let mut used = 0;
            for p in planned.iter().filter(|p| p.chunk == Some(i)) {
                let mut toks = filler(rng, p.filler);
                toks.extend(p.span.iter().cloned());
                used += toks.len();
                script.push(toks);
            }
            let room = b.saturating_sub(used + 1);
            let len = rng.random_range(0..=room.min(40));
            let mut toks = filler(rng, len);
            toks.push(THINK_CLOSE.to_string());
            script.push(toks);
        }
    }
    let mut own = 1;
    for p in planned.iter().filter(|p| p.chunk.is_none()) {
        let mut toks = filler(rng, p.filler);
        toks.extend(p.span.iter().cloned());
        own += toks.len();
        script.push(toks);
    }
    let len = rng.random_range(0..8);
    let mut toks = filler(rng, len);
    toks.push(THINK_CLOSE.to_string());
    own += toks.len();
    script.push(toks);

    let found: Vec<&str> = planned
        .iter()
        .zip(&results)
        .filter(|(p, _)| p.succeeds)
        .map(|(_, r)| r.as_str())
        .collect();
    let response = if found.is_empty() {
        tokenize("I could not find anything .")
    } else {
        tokenize(&format!("Here is what I found : {} .", found.join(" , ")))
    };
    let post_turn_tokens = own + response.len();
    script.push(response);

    let early_hits = planned
        .iter()
        .filter(|p| p.succeeds && p.chunk.is_some())
        .count();
    let late_hits = planned
        .iter()
        .filter(|p| p.succeeds && p.chunk.is_none())
        .count();
    let score = if found.len() == calls.len() {
        2
    } else if !found.is_empty() {
        1
    } else {
        0
    };

    let mut specs: Vec<ToolSpec> = Vec::new();
    for gt in &calls {
        let mut parameters = BTreeMap::new();
        for key in gt.arguments.keys() {
            parameters.insert(
                key.clone(),
                ParamSpec {
                    type_tag: "string".into(),
                    required: true,
                    description: String::new(),
                },
            );
        }
        specs.push(ToolSpec {
            name: gt.name.clone(),
            description: format!("{} lookup", gt.name.replace('_', " ")),
            parameters,
        });
    }

    Ok(SyntheticCase {
        scenario: Scenario {
            id,
            task: Task::ToolCall,
            words,
            tools: specs,
            ground_truth_calls: calls,
            label: None,
            system_preamble: Some("You can call the tools described below.".into()),
        },
        script: script.entries,
        expected: Expectation {
            chunks: n,
            interrupted_at: None,
            t_interrupt: None,
            post_turn_tokens,
            early_hits,
            late_hits,
            success: params.n_failed == 0,
            valid_interrupt: None,
            quality: Some(QualityScore {
                correctness: score,
                completeness: score,
            }),
        },
    })
}

fn tool_name(c: usize) -> String {
    let base = TOOL_NAMES[c % TOOL_NAMES.len()];
    match c / TOOL_NAMES.len() {
        0 => base.to_string(),
        round => format!("{base}_{}", round + 1),
    }
}
