//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use common::{fixture, oracle, run_case};
use listenthink::backend::{ScriptEntry, ScriptedBackend};
use listenthink::metrics::{
    first_hits, interrupt_report, interruption_latency, tool_report, AnswerKeyJudge,
    GroundedResponseJudge, InterruptLabel, Report, ReportKind,
};
use listenthink::orchestrator::{build_context, check_trace, run};
use listenthink::scenario_io::{
    generate_synthetic, load_scenario, load_script, InterruptPlan, Scenario, SyntheticCase,
    SyntheticParams, Task,
};
use listenthink::timeline::{segment_transcript, thinking_budget, ChunkingConfig, WordTiming};
use listenthink::tool_runtime::{annotate_earliest_times, GroundTruthCall, Phase, ValueSource};
use listenthink::trace::{Mode, SessionConfig, TraceEvent, TraceStatus, TurnTrace};
use listenthink::trainset::{
    corpus_to_string, read_corpus, sequence_from_trace, toolcall_sequence, validate_corpus,
    validate_sequence, TrainInput, TrainSequence,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn session(chunking: &ChunkingConfig) -> SessionConfig {
    SessionConfig {
        chunking: chunking.clone(),
        ..SessionConfig::default()
    }
}

const FILLER: [&str; 6] = ["so", "then", "check", "value", "next", "hmm"];

fn filler(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n)
        .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_string())
        .collect()
}

/// Varied interruption and tool-use parameters drawn from `rng`.
fn random_params(rng: &mut ChaCha8Rng, task: Task, mode: Mode) -> SyntheticParams {
    let mut p = match task {
        Task::Interrupt => SyntheticParams::interrupt(),
        Task::ToolCall => SyntheticParams::tool_call(),
    };
    p.mode = mode;
    p.chunking.t_chunk = [2.0, 3.0, 4.0, 5.0][rng.random_range(0..4)];
    p.chunking.n_tps = [10.0, 40.0, 80.0][rng.random_range(0..3)];
    p.duration = (rng.random_range(1.0..60.0f64) * 100.0).round() / 100.0;
    p.n_words = rng.random_range(1..=(p.duration * 2.0) as usize + 1);
    if task == Task::ToolCall {
        p.n_calls = rng.random_range(1..=5);
        p.n_failed = rng.random_range(0..=p.n_calls);
    }
    p
}

// 1. Protocol shape ---------------------------------------------------------

/// Independent structural check of a listening-mode trace.
fn protocol_violations(trace: &TurnTrace, n_chunks: usize) -> Vec<String> {
    let mut out = Vec::new();
    let cfg = &trace.config.chunking;
    let b = thinking_budget(cfg);
    let mut expect_chunk = 1;
    let mut awaiting_thinking = None;
    let mut finals = 0;
    let mut responses = 0;
    for e in &trace.events {
        match e {
            TraceEvent::ChunkDelivered { chunk, .. } => {
                if awaiting_thinking.is_some() {
                    out.push(format!(
                        "S_{} delivered before R_{}",
                        chunk.index,
                        expect_chunk - 1
                    ));
                }
                if chunk.index != expect_chunk {
                    out.push(format!("expected S_{expect_chunk}, got S_{}", chunk.index));
                }
                if chunk.is_final {
                    finals += 1;
                    if chunk.index != n_chunks {
                        out.push(format!("S_{} marked final", chunk.index));
                    }
                }
                awaiting_thinking = Some(chunk.index);
                expect_chunk += 1;
            }
            TraceEvent::ThinkingGenerated { chunk, .. } => {
                if awaiting_thinking != Some(chunk.index) {
                    out.push(format!("R_{} out of place", chunk.index));
                }
                awaiting_thinking = None;
                let toks = &chunk.tokens;
                if toks.first().map(String::as_str) != Some("<think>")
                    || toks.last().map(String::as_str) != Some("</think>")
                {
                    out.push(format!("R_{} not closed", chunk.index));
                }
                let injected: usize = chunk.injections.iter().map(|i| i.len).sum();
                if chunk.index < n_chunks && toks.len() - injected > b + 2 {
                    out.push(format!(
                        "R_{} has {} own tokens, bound {}",
                        chunk.index,
                        toks.len() - injected,
                        b + 2
                    ));
                }
            }
            TraceEvent::ResponseEmitted { .. } => responses += 1,
            TraceEvent::ToolExchange { .. } | TraceEvent::ContextRebuilt { .. } => {}
        }
    }
    let delivered = expect_chunk - 1;
    match trace.interrupted_at {
        Some(k) => {
            if finals != 0 || delivered != k {
                out.push(format!(
                    "interrupted at {k} but delivered {delivered} ({finals} final)"
                ));
            }
        }
        None => {
            if finals != 1 || delivered != n_chunks {
                out.push(format!(
                    "{delivered}/{n_chunks} chunks delivered, {finals} final"
                ));
            }
        }
    }
    if responses != 1 {
        out.push(format!("{responses} responses"));
    }
    let ctx = build_context(&trace.preamble, &trace.events);
    let count = |m: &str| ctx.iter().filter(|t| *t == m).count();
    let want_eoa = usize::from(trace.interrupted_at.is_none());
    if count("[EOA]") != want_eoa {
        out.push(format!("{} [EOA] in context", count("[EOA]")));
    }
    if count("[EOPA]") != delivered - want_eoa {
        out.push(format!("{} [EOPA] for {delivered} chunks", count("[EOPA]")));
    }
    out
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut interrupted = 0;
    let mut with_calls = 0;
    for seed in 0..1000u64 {
        let task = if seed % 2 == 0 {
            Task::Interrupt
        } else {
            Task::ToolCall
        };
        let params = random_params(&mut rng, task, Mode::Shanks);
        let case = generate_synthetic(seed, &params).map_err(|e| format!("seed {seed}: {e}"))?;
        let trace = run_case(&case, Mode::Shanks, &session(&params.chunking));
        ensure(trace.status == TraceStatus::Completed, || {
            format!("seed {seed}: {:?}", trace.status)
        })?;
        let mut v = protocol_violations(&trace, case.expected.chunks);
        v.extend(check_trace(&trace));
        ensure(v.is_empty(), || format!("seed {seed}: {v:?}"))?;
        interrupted += usize::from(trace.interrupted_at.is_some());
        with_calls += usize::from(trace.exchanges().next().is_some());
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000 runs, 0 violations ({interrupted} interrupted, {with_calls} with tool calls) in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 2. Timing ---------------------------------------------------------------

fn criterion_2() -> Outcome {
    let params = SyntheticParams {
        interrupt: InterruptPlan::Never,
        ..SyntheticParams::interrupt()
    };
    let case = generate_synthetic(7, &params).map_err(|e| e.to_string())?;
    let cfg = ChunkingConfig::default();
    let chunks = segment_transcript(&case.scenario.words, &cfg).map_err(|e| e.to_string())?;
    ensure(chunks.len() == 13, || format!("{} chunks", chunks.len()))?;
    let last = chunks.last().unwrap();
    ensure(last.span_start == 48.0 && last.span_end == 49.25, || {
        format!("last span [{}, {}]", last.span_start, last.span_end)
    })?;
    let trace = run_case(&case, Mode::Shanks, &session(&cfg));
    let mut starts = 0;
    for e in &trace.events {
        match e {
            TraceEvent::ChunkDelivered { time, chunk } => {
                ensure(*time == chunk.index as f64 * 4.0, || {
                    format!("S_{} at {time}", chunk.index)
                })?;
            }
            TraceEvent::ThinkingGenerated { start_time, chunk } => {
                let i = chunk.index;
                let span = &chunks[i - 1];
                ensure(*start_time == i as f64 * 4.0, || {
                    format!("R_{i} starts at {start_time}")
                })?;
                ensure(*start_time - span.span_start >= 4.0, || {
                    format!("R_{i} lag below t_chunk")
                })?;
                ensure(*start_time >= span.span_end, || {
                    format!("R_{i} starts before S_{i} ends")
                })?;
                starts += 1;
            }
            _ => {}
        }
    }
    ensure(starts == 13, || format!("{starts} thinking blocks"))?;
    Ok("13 chunks, final span [48, 49.25], R_i starts at 4i".into())
}

// 3. Interruption semantics -----------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_err = 0.0f64;
    for combo in 0..200 {
        let t = [2.0, 4.0, 5.0][rng.random_range(0..3)];
        let n_tps = [20.0, 40.0, 80.0][rng.random_range(0..3)];
        let cfg = ChunkingConfig {
            t_chunk: t,
            n_tps,
            ..ChunkingConfig::default()
        };
        let b = thinking_budget(&cfg);
        let n = rng.random_range(2..=16usize);
        let k = rng.random_range(1..n);
        let mut words = Vec::new();
        for i in 0..n {
            let base = i as f64 * t;
            for j in 0..rng.random_range(1..=3) {
                let s = base + 0.1 * t + j as f64 * 0.25 * t;
                words.push(WordTiming::new(format!("w{i}x{j}"), s, s + 0.2 * t));
            }
        }
        let scenario = Scenario {
            id: format!("int-{combo}"),
            task: Task::Interrupt,
            words,
            tools: Vec::new(),
            ground_truth_calls: Vec::new(),
            label: None,
            system_preamble: None,
        };
        let mut script = Vec::new();
        for i in 1..k {
            let len = rng.random_range(0..b);
            let mut toks = filler(&mut rng, len);
            toks.push("</think>".into());
            script.push(ScriptEntry::new(i, toks));
        }
        let len = rng.random_range(1..b);
        let mut toks = filler(&mut rng, len - 1);
        toks.insert(rng.random_range(0..len), "[INTERRUPT]".into());
        toks.push("</think>".into());
        let own = 1 + toks.len();
        script.push(ScriptEntry::new(k, toks));
        script.push(ScriptEntry::new(k + 1, ["Hold", "on", "."]));

        let backend = ScriptedBackend::new(&script);
        let trace = run(
            Mode::Shanks,
            &scenario,
            &backend,
            &mut scenario.tool_environment(),
            &session(&cfg),
        )
        .map_err(|e| format!("combo {combo}: {e}"))?;
        let ctx = || format!("combo {combo} (N={n}, k={k}, t={t}, n_tps={n_tps})");
        ensure(trace.interrupted_at == Some(k), || {
            format!("{}: interrupted_at {:?}", ctx(), trace.interrupted_at)
        })?;
        let max_delivered = trace.delivered_chunks().map(|c| c.index).max();
        ensure(max_delivered == Some(k), || {
            format!("{}: delivered up to {max_delivered:?}", ctx())
        })?;
        ensure(trace.thinking_chunks().all(|c| c.index <= k), || {
            format!("{}: thinking past k", ctx())
        })?;
        let chunks = segment_transcript(&scenario.words, &cfg).map_err(|e| e.to_string())?;
        ensure(
            trace.undelivered_overlap.as_ref() == Some(&chunks[k]),
            || format!("{}: wrong overlap", ctx()),
        )?;
        let t_error = (rng.random_range(0.0..k as f64 * t) * 1000.0).round() / 1000.0;
        let label = InterruptLabel::wrong(&scenario.id, t_error);
        let closed = k as f64 * t + (own + 1) as f64 / n_tps - t_error;
        let got =
            interruption_latency(&trace, &label).ok_or_else(|| format!("{}: no latency", ctx()))?;
        let err = (got - closed).abs();
        max_err = max_err.max(err);
        ensure(err <= 1e-9, || {
            format!("{}: latency {got} vs {closed}", ctx())
        })?;
    }
    Ok(format!(
        "200 k/N combinations, max latency error {max_err:e} s"
    ))
}

// 4. Mask fidelity ----------------------------------------------------------

fn criterion_4() -> Outcome {
    let input =
        std::fs::read_to_string(fixture("shapes.input.jsonl")).map_err(|e| e.to_string())?;
    let golden =
        std::fs::read_to_string(fixture("shapes.golden.jsonl")).map_err(|e| e.to_string())?;
    let records = TrainInput::read_jsonl(input.as_bytes()).map_err(|e| e.to_string())?;
    let seqs: Vec<TrainSequence> = records
        .iter()
        .map(|(line, r)| r.assemble().map_err(|e| format!("line {line}: {e}")))
        .collect::<Result<_, _>>()?;
    let text = corpus_to_string(&seqs);
    ensure(text == golden, || {
        "assembled corpus differs from golden fixture".into()
    })?;
    ensure(validate_corpus(golden.as_bytes()).is_empty(), || {
        "golden fixture fails validation".into()
    })?;

    let mut mutants = 0;
    for seq in &seqs {
        for i in 0..seq.blocks.len() {
            let mut bad = seq.clone();
            bad.blocks[i].loss_mask = !bad.blocks[i].loss_mask;
            ensure(!validate_sequence(&bad).is_empty(), || {
                format!("{:?} flip {i} accepted", seq.shape)
            })?;
            let diags = validate_corpus(corpus_to_string(&[bad]).as_bytes());
            ensure(diags.len() == 1 && diags[0].line == 2, || {
                format!("corpus flip {i}: {diags:?}")
            })?;
            mutants += 1;
        }
    }
    Ok(format!(
        "3 shapes byte-identical to golden, {mutants}/{mutants} mask flips rejected"
    ))
}

// 5. Tool accounting ------------------------------------------------------

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut suites = 0;
    for suite in 0..30u64 {
        let mode = [Mode::Shanks, Mode::CallAfterListen, Mode::Combined][suite as usize % 3];
        let mut traces = Vec::new();
        let mut scenarios = Vec::new();
        let (mut early, mut late, mut gt, mut ok) = (0, 0, 0, 0);
        let mut post = Vec::new();
        let mut quality = Vec::new();
        for j in 0..rng.random_range(1..=12u64) {
            let params = random_params(&mut rng, Task::ToolCall, mode);
            let case = generate_synthetic(suite * 100 + j, &params).map_err(|e| e.to_string())?;
            let trace = run_case(&case, mode, &session(&params.chunking));
            let e = &case.expected;
            let hits = first_hits(&trace);
            let got_early = hits.values().filter(|p| **p == Phase::Early).count();
            let got_late = hits.values().filter(|p| **p == Phase::Late).count();
            ensure(
                (got_early, got_late, trace.post_turn_tokens)
                    == (e.early_hits, e.late_hits, e.post_turn_tokens),
                || {
                    format!(
                        "{} in {mode:?}: got {got_early}/{got_late}/{} expected {e:?}",
                        case.scenario.id, trace.post_turn_tokens
                    )
                },
            )?;
            early += e.early_hits;
            late += e.late_hits;
            gt += case.scenario.ground_truth_calls.len();
            ok += usize::from(e.success);
            post.push(e.post_turn_tokens as f64);
            quality.push(e.quality.unwrap().correctness as f64);
            traces.push(trace);
            scenarios.push(case.scenario);
        }
        let r = tool_report(&traces, &scenarios, &AnswerKeyJudge).map_err(|e| e.to_string())?;
        let (ea, la) = (early as f64 / gt as f64, late as f64 / gt as f64);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure(
            r.total_accuracy == Some(r.early_accuracy.unwrap() + r.late_accuracy.unwrap()),
            || format!("suite {suite}: accuracy identity broken: {r:?}"),
        )?;
        ensure(
            r.early_hits == early
                && r.late_hits == late
                && r.total_gt == gt
                && r.successes == ok
                && r.early_accuracy == Some(ea)
                && r.late_accuracy == Some(la)
                && r.success_rate == Some(ok as f64 / traces.len() as f64)
                && r.mean_post_turn_tokens == Some(mean(&post))
                && r.correctness == Some(mean(&quality)),
            || format!("suite {suite}: report {r:?} vs planted {early}/{late}/{gt}/{ok}"),
        )?;
        suites += 1;
    }

    for dag in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + dag);
        let n_words = rng.random_range(1..30);
        let mut t = 0.0;
        let words: Vec<WordTiming> = (0..n_words)
            .map(|i| {
                t += rng.random_range(0.05..1.0);
                let s = t;
                t += rng.random_range(0.05..1.0);
                WordTiming::new(format!("w{i}"), s, t)
            })
            .collect();
        let n_calls = rng.random_range(1..10u32);
        let mut calls: Vec<GroundTruthCall> = Vec::new();
        for id in 1..=n_calls {
            let mut args = serde_json::Map::new();
            let mut spans = serde_json::Map::new();
            for a in 0..rng.random_range(0..3) {
                let first = rng.random_range(0..n_words);
                let last = rng.random_range(first..n_words);
                args.insert(format!("a{a}"), json!("v"));
                spans.insert(format!("a{a}"), json!({ "span": [first, last] }));
            }
            let deps: BTreeSet<u32> = (1..id).filter(|_| rng.random_bool(0.3)).collect();
            for d in &deps {
                args.insert(format!("d{d}"), json!("r"));
                spans.insert(format!("d{d}"), json!("dependency"));
            }
            let call = json!({"id": id, "name": format!("f{id}"), "arguments": args,
                              "response": "{}", "depends_on": deps, "value_spans": spans});
            calls.push(serde_json::from_value(call).map_err(|e| e.to_string())?);
        }
        // Shuffle so the library has to find the dependency order itself.
        for i in (1..calls.len()).rev() {
            calls.swap(i, rng.random_range(0..=i));
        }
        annotate_earliest_times(&mut calls, &words).map_err(|e| format!("dag {dag}: {e}"))?;
        let mut expect: BTreeMap<u32, f64> = BTreeMap::new();
        let mut ids: Vec<u32> = calls.iter().map(|c| c.id).collect();
        ids.sort();
        for id in ids {
            let c = calls.iter().find(|c| c.id == id).unwrap();
            let mut e = 0.0f64;
            for src in c.value_spans.values() {
                if let ValueSource::Span([_, last]) = src {
                    e = e.max(words[*last].end);
                }
            }
            for d in &c.depends_on {
                e = e.max(expect[d]);
            }
            expect.insert(id, e);
        }
        for c in &calls {
            let got = c.earliest_time.unwrap();
            ensure(got == expect[&c.id], || {
                format!(
                    "dag {dag}: call {} at {got}, oracle {}",
                    c.id, expect[&c.id]
                )
            })?;
            for d in &c.depends_on {
                let dep = calls.iter().find(|x| x.id == *d).unwrap();
                ensure(got >= dep.earliest_time.unwrap(), || {
                    format!("dag {dag}: {} before dependency {d}", c.id)
                })?;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{suites} planted suites match closed form, 500 DAGs monotone, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 6. Combined-mode latency direction ----------------------------------------

fn weather_run(mode: Mode, script: &str) -> Result<TurnTrace, String> {
    let scenario = load_scenario(fixture("weather.scenario.jsonl")).map_err(|e| e.to_string())?;
    let script = load_script(fixture(script)).map_err(|e| e.to_string())?;
    let backend = ScriptedBackend::new(&script.entries);
    run(
        mode,
        &scenario,
        &backend,
        &mut scenario.tool_environment(),
        &SessionConfig::default(),
    )
    .map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let cal = weather_run(Mode::CallAfterListen, "weather.cal.script.jsonl")?;
    let comb = weather_run(Mode::Combined, "weather.combined.script.jsonl")?;
    for t in [&cal, &comb] {
        ensure(t.status == TraceStatus::Completed, || {
            format!("{:?}: {:?}", t.mode, t.status)
        })?;
        let v = check_trace(t);
        ensure(v.is_empty(), || format!("{:?}: {v:?}", t.mode))?;
    }
    ensure(
        first_hits(&comb) == BTreeMap::from([(1, Phase::Early)]),
        || "combined call not early".into(),
    )?;
    ensure(
        first_hits(&cal) == BTreeMap::from([(1, Phase::Late)]),
        || "call-after-listen call not late".into(),
    )?;
    ensure(comb.post_turn_tokens < cal.post_turn_tokens, || {
        "combined not shorter".into()
    })?;
    ensure(
        (cal.post_turn_tokens, comb.post_turn_tokens) == (313, 117),
        || format!("got {} vs {}", cal.post_turn_tokens, comb.post_turn_tokens),
    )?;
    Ok(format!(
        "call-after-listen {} vs combined {} post-turn tokens ({:.1}% fewer)",
        cal.post_turn_tokens,
        comb.post_turn_tokens,
        100.0 * (1.0 - comb.post_turn_tokens as f64 / cal.post_turn_tokens as f64)
    ))
}

// 7. Determinism and round-trips --------------------------------------------

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut all_traces = Vec::new();
    let mut all_scenarios = Vec::new();
    let mut corpus = Vec::new();
    for i in 0..300u64 {
        let task = if i % 2 == 0 {
            Task::Interrupt
        } else {
            Task::ToolCall
        };
        let mode = [Mode::Shanks, Mode::CallAfterListen, Mode::Combined][(i / 2 % 3) as usize];
        let params = random_params(&mut rng, task, mode);
        let case = generate_synthetic(i, &params).map_err(|e| e.to_string())?;
        ensure(generate_synthetic(i, &params) == Ok(case.clone()), || {
            format!("generator not deterministic at {i}")
        })?;

        let text = case.scenario.to_jsonl_string();
        let back = Scenario::from_jsonl_str(&text).map_err(|e| format!("scenario {i}: {e}"))?;
        ensure(
            back == case.scenario && back.to_jsonl_string() == text,
            || format!("scenario {i} round-trip"),
        )?;

        let cfg = session(&params.chunking);
        let a = run_case(&case, mode, &cfg);
        let b = run_case(&case, mode, &cfg);
        let text = a.to_jsonl_string();
        ensure(text == b.to_jsonl_string(), || {
            format!("run {i} not byte-identical")
        })?;
        let back = TurnTrace::from_jsonl_str(&text).map_err(|e| format!("trace {i}: {e}"))?;
        ensure(back == a && back.to_jsonl_string() == text, || {
            format!("trace {i} round-trip")
        })?;

        let seq = match task {
            Task::ToolCall => {
                let n = segment_transcript(&case.scenario.words, &params.chunking)
                    .unwrap()
                    .len();
                let thinkings: Vec<Vec<String>> = (0..n).map(|_| filler(&mut rng, 3)).collect();
                toolcall_sequence(
                    &case.scenario,
                    &params.chunking,
                    &thinkings,
                    &["done".to_string()],
                )
            }
            Task::Interrupt => sequence_from_trace(&a),
        };
        match seq {
            Ok(s) => corpus.push(s),
            Err(e) if mode == Mode::Combined => drop(e),
            Err(e) => return Err(format!("sequence {i}: {e}")),
        }
        all_traces.push(a);
        all_scenarios.push(case);
    }

    let text = corpus_to_string(&corpus);
    let back: Vec<TrainSequence> = read_corpus(text.as_bytes())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    ensure(back == corpus && corpus_to_string(&back) == text, || {
        "corpus round-trip".into()
    })?;
    ensure(validate_corpus(text.as_bytes()).is_empty(), || {
        "corpus invalid".into()
    })?;

    let mut reports = 0;
    for r in 0..300usize {
        let picks: Vec<usize> = (0..all_traces.len())
            .filter(|_| rng.random_bool(0.05))
            .collect();
        let (int, tool): (Vec<usize>, Vec<usize>) = picks
            .into_iter()
            .partition(|&i| all_scenarios[i].scenario.task == Task::Interrupt);
        let traces: Vec<TurnTrace> = int.iter().map(|&i| all_traces[i].clone()).collect();
        let labels: Vec<InterruptLabel> = int
            .iter()
            .map(|&i| all_scenarios[i].scenario.label.clone().unwrap())
            .collect();
        let interrupt = interrupt_report(&traces, &labels, &GroundedResponseJudge)
            .map_err(|e| e.to_string())?;
        let traces: Vec<TurnTrace> = tool.iter().map(|&i| all_traces[i].clone()).collect();
        let scenarios: Vec<Scenario> = tool
            .iter()
            .map(|&i| all_scenarios[i].scenario.clone())
            .collect();
        let tool = tool_report(&traces, &scenarios, &AnswerKeyJudge).map_err(|e| e.to_string())?;
        let report = Report {
            kind: ReportKind::default(),
            interrupt: Some(interrupt),
            tool: Some(tool),
        };
        let json = report.to_json();
        let back = Report::from_json(&json).map_err(|e| e.to_string())?;
        ensure(back == report && back.to_json() == json, || {
            format!("report {r} round-trip")
        })?;
        reports += 1;
    }
    Ok(format!(
        "300 runs byte-identical; 300 scenarios, 300 traces, {} sequences, {reports} reports round-trip",
        corpus.len()
    ))
}

// 8. Metric oracle equivalence ----------------------------------------------

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut n_traces = 0;
    for set in 0..200u64 {
        let size = rng.random_range(0..=10u64);
        let task = if set % 2 == 0 {
            Task::Interrupt
        } else {
            Task::ToolCall
        };
        let mut traces = Vec::new();
        let mut scenarios = Vec::new();
        let mut labels = Vec::new();
        for j in 0..size {
            let mode = match task {
                Task::Interrupt => Mode::Shanks,
                Task::ToolCall => {
                    [Mode::Shanks, Mode::CallAfterListen, Mode::Combined][rng.random_range(0..3)]
                }
            };
            let params = random_params(&mut rng, task, mode);
            let case: SyntheticCase =
                generate_synthetic(set * 1000 + j, &params).map_err(|e| e.to_string())?;
            traces.push(run_case(&case, mode, &session(&params.chunking)));
            labels.extend(case.scenario.label.clone());
            scenarios.push(case.scenario);
        }
        for i in (1..traces.len()).rev() {
            traces.swap(i, rng.random_range(0..=i));
        }
        n_traces += traces.len();
        match task {
            Task::Interrupt => {
                let lib = interrupt_report(&traces, &labels, &GroundedResponseJudge)
                    .map_err(|e| e.to_string())?;
                let o = oracle::interrupt_report(&traces, &labels, &GroundedResponseJudge)
                    .ok_or_else(|| format!("set {set}: oracle failed"))?;
                oracle::same_interrupt(&lib, &o).map_err(|e| format!("set {set}: {e}"))?;
            }
            Task::ToolCall => {
                let lib =
                    tool_report(&traces, &scenarios, &AnswerKeyJudge).map_err(|e| e.to_string())?;
                let o = oracle::tool_report(&traces, &scenarios, &AnswerKeyJudge)
                    .ok_or_else(|| format!("set {set}: oracle failed"))?;
                ensure(lib == o, || format!("set {set}: {lib:?} vs {o:?}"))?;
            }
        }
    }
    Ok(format!(
        "200 random trace sets ({n_traces} traces) agree with the re-scan oracle"
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("protocol shape", criterion_1),
        ("timing", criterion_2),
        ("interruption semantics", criterion_3),
        ("mask fidelity", criterion_4),
        ("tool accounting", criterion_5),
        ("combined-mode latency", criterion_6),
        ("determinism and round-trips", criterion_7),
        ("metric oracle equivalence", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match result {
            Ok(detail) => println!("acceptance {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {}/8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
