//! Subcommand implementations. Each returns the process exit code on
//! success; validation problems surface as [`crate::Invalid`] errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use listenthink::backend::{Backend, RemoteBackend, RemoteConfig, ScriptedBackend};
use listenthink::jsonl::{self, write_atomic};
use listenthink::metrics::{
    interrupt_report, render_table, tool_report, AnswerKeyJudge, GroundedResponseJudge,
    InterruptJudge, InterruptLabel, MetricsError, QualityJudge, RemoteJudge, Report,
};
use listenthink::orchestrator::{check_trace, run, RunError};
use listenthink::scenario_io::{
    generate_synthetic, read_ground_truth, InterruptPlan, Scenario, SyntheticParams, Task,
};
use listenthink::tool_runtime::validate_ground_truth;
use listenthink::trace::{Mode, SessionConfig, TraceStatus};
use listenthink::trainset::{
    sequence_from_trace, validate_corpus, validate_sequence, write_corpus, TrainInput,
    TrainSequence,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, BackendChoice, FileConfig, JudgeChoice};
use crate::files::{self, file_stem};
use crate::invalid;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

/// Scenario id, final status, post-turn tokens and any error message.
type Outcome = (String, TraceStatus, usize, Option<String>);

pub struct SimulateOptions {
    pub mode: Mode,
    pub session: SessionConfig,
    pub backend: BackendChoice,
    pub output_dir: PathBuf,
    pub jobs: usize,
}

fn make_backend(
    choice: &BackendChoice,
    scripts: &BTreeMap<String, listenthink::scenario_io::Script>,
    id: &str,
) -> Box<dyn Backend> {
    match choice {
        BackendChoice::Scripted(_) => Box::new(ScriptedBackend::new(&scripts[id].entries)),
        BackendChoice::Remote { url, timeout_secs } => Box::new(RemoteBackend::new(RemoteConfig {
            url: url.clone(),
            timeout_secs: *timeout_secs,
        })),
    }
}

pub fn simulate(scenarios: &[PathBuf], opts: &SimulateOptions) -> anyhow::Result<u8> {
    let loaded = files::scenarios(scenarios)?;
    if loaded.is_empty() {
        return Err(invalid("no scenario files given"));
    }
    let scripts = match &opts.backend {
        BackendChoice::Scripted(paths) => {
            let s = files::scripts(paths)?;
            for (p, sc) in &loaded {
                if !s.contains_key(&sc.id) {
                    return Err(invalid(format!(
                        "{}: no script for scenario {:?}",
                        p.display(),
                        sc.id
                    )));
                }
            }
            s
        }
        BackendChoice::Remote { .. } => BTreeMap::new(),
    };
    let mut stems = BTreeMap::new();
    for (_, s) in &loaded {
        if let Some(other) = stems.insert(file_stem(&s.id), &s.id) {
            return Err(invalid(format!(
                "scenario ids {other:?} and {:?} map to the same output file",
                s.id
            )));
        }
    }
    std::fs::create_dir_all(&opts.output_dir)
        .with_context(|| format!("creating {}", opts.output_dir.display()))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .context("starting worker pool")?;
    let outcomes: Vec<anyhow::Result<Outcome>> = pool.install(|| {
        loaded
            .par_iter()
            .map(|(_, scenario)| session(scenario, &scripts, opts))
            .collect()
    });

    let mut code = EXIT_OK;
    for outcome in outcomes {
        let (id, status, post_turn, error) = outcome?;
        let status_name = serde_json::to_value(status)?;
        let status_name = status_name.as_str().unwrap_or("?");
        match error {
            None => println!("{id}\t{status_name}\tpost_turn_tokens={post_turn}"),
            Some(e) => println!("{id}\t{status_name}\t{e}"),
        }
        if status != TraceStatus::Completed {
            code = EXIT_RUNTIME;
        }
    }
    Ok(code)
}

fn session(
    scenario: &Scenario,
    scripts: &BTreeMap<String, listenthink::scenario_io::Script>,
    opts: &SimulateOptions,
) -> anyhow::Result<Outcome> {
    let backend = make_backend(&opts.backend, scripts, &scenario.id);
    let mut env = scenario.tool_environment();
    let (trace, error) = match run(
        opts.mode,
        scenario,
        backend.as_ref(),
        &mut env,
        &opts.session,
    ) {
        Ok(t) => (t, None),
        Err(e) => match e.trace() {
            Some(t) => {
                let msg = e.to_string();
                (t.clone(), Some(msg))
            }
            None => return Err(run_error(&scenario.id, e)),
        },
    };
    let path = opts
        .output_dir
        .join(format!("{}.trace.jsonl", file_stem(&scenario.id)));
    write_atomic(&path, trace.to_jsonl_string().as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    let error = error.or_else(|| trace.error.clone());
    Ok((
        scenario.id.clone(),
        trace.status,
        trace.post_turn_tokens,
        error,
    ))
}

fn run_error(id: &str, e: RunError) -> anyhow::Error {
    match e {
        RunError::InvalidScenario(_) | RunError::Config(_) => invalid(format!("{id}: {e}")),
        other => anyhow::anyhow!("{id}: {other}"),
    }
}

/// Builds a corpus from `train_input` files and trace files.
pub fn assemble_train(inputs: &[PathBuf], output: &Path) -> anyhow::Result<u8> {
    let mut seqs: Vec<TrainSequence> = Vec::new();
    for path in files::expand(inputs, ".jsonl")? {
        match files::header_type(&path)?.as_str() {
            "train_input" => {
                let f = File::open(&path).map(BufReader::new)?;
                let records = TrainInput::read_jsonl(f).map_err(|e| files::located(&path, e))?;
                for (line, input) in records {
                    let seq = input
                        .assemble()
                        .map_err(|e| invalid(format!("{}:{line}: {e}", path.display())))?;
                    seqs.push(seq);
                }
            }
            "header" => {
                let trace = files::trace(&path)?;
                let seq = sequence_from_trace(&trace)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                seqs.push(seq);
            }
            other => {
                return Err(invalid(format!(
                    "{}:1: expected train_input records or a trace, found {other:?}",
                    path.display()
                )))
            }
        }
    }
    for (i, s) in seqs.iter().enumerate() {
        let problems = validate_sequence(s);
        if !problems.is_empty() {
            return Err(invalid(format!(
                "sequence {}: {}",
                i + 1,
                problems.join("; ")
            )));
        }
    }
    let mut buf = Vec::new();
    write_corpus(&mut buf, &seqs)?;
    write_atomic(output, &buf).with_context(|| format!("writing {}", output.display()))?;
    println!("wrote {} sequences to {}", seqs.len(), output.display());
    Ok(EXIT_OK)
}

pub struct ScoreInputs<'a> {
    pub scenarios: &'a [PathBuf],
    pub traces: &'a [PathBuf],
    pub labels: Option<&'a Path>,
    pub judge: JudgeChoice,
    pub output: Option<&'a Path>,
}

fn metrics_error(e: MetricsError) -> anyhow::Error {
    match e {
        MetricsError::Judge(j) => anyhow::anyhow!("judge failed: {j}"),
        other => invalid(other.to_string()),
    }
}

pub fn score(inputs: &ScoreInputs) -> anyhow::Result<u8> {
    let scenarios: BTreeMap<String, Scenario> = files::scenarios(inputs.scenarios)?
        .into_iter()
        .map(|(_, s)| (s.id.clone(), s))
        .collect();
    let mut interrupt_traces = Vec::new();
    let mut tool_traces = Vec::new();
    for path in files::expand(inputs.traces, ".trace.jsonl")? {
        let t = files::trace(&path)?;
        let scenario = scenarios.get(&t.scenario_id).ok_or_else(|| {
            invalid(format!(
                "{}: no scenario file for {:?}",
                path.display(),
                t.scenario_id
            ))
        })?;
        match scenario.task {
            Task::Interrupt => interrupt_traces.push(t),
            Task::ToolCall => tool_traces.push(t),
        }
    }
    if interrupt_traces.is_empty() && tool_traces.is_empty() {
        return Err(invalid("no traces to score"));
    }

    let mut from_file: BTreeMap<String, InterruptLabel> = BTreeMap::new();
    if let Some(p) = inputs.labels {
        for l in files::labels(p)? {
            from_file.insert(l.scenario_id.clone(), l);
        }
    }
    let mut labels = Vec::new();
    for t in &interrupt_traces {
        let label = from_file
            .get(&t.scenario_id)
            .or(scenarios[&t.scenario_id].label.as_ref())
            .ok_or_else(|| invalid(format!("no label for scenario {:?}", t.scenario_id)))?;
        labels.push(label.clone());
    }

    let (ij, qj): (Box<dyn InterruptJudge>, Box<dyn QualityJudge>) = match &inputs.judge {
        JudgeChoice::Default => (Box::new(GroundedResponseJudge), Box::new(AnswerKeyJudge)),
        JudgeChoice::Remote { url, timeout_secs } => (
            Box::new(RemoteJudge::new(url.clone(), *timeout_secs)),
            Box::new(RemoteJudge::new(url.clone(), *timeout_secs)),
        ),
    };
    let tool_scenarios: Vec<Scenario> = scenarios
        .values()
        .filter(|s| s.task == Task::ToolCall)
        .cloned()
        .collect();
    let report = Report {
        interrupt: if interrupt_traces.is_empty() {
            None
        } else {
            Some(interrupt_report(&interrupt_traces, &labels, ij.as_ref()).map_err(metrics_error)?)
        },
        tool: if tool_traces.is_empty() {
            None
        } else {
            Some(tool_report(&tool_traces, &tool_scenarios, qj.as_ref()).map_err(metrics_error)?)
        },
        ..Default::default()
    };
    if let Some(out) = inputs.output {
        write_atomic(out, report.to_json().as_bytes())
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", render_table(&report));
    Ok(EXIT_OK)
}

pub fn report(paths: &[PathBuf]) -> anyhow::Result<u8> {
    for (i, p) in paths.iter().enumerate() {
        let text =
            std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        let r = Report::from_json(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        if paths.len() > 1 {
            if i > 0 {
                println!();
            }
            println!("== {}", p.display());
        }
        print!("{}", render_table(&r));
    }
    Ok(EXIT_OK)
}

/// Problems in one file, as `(line, message)`; line 0 means the whole file.
fn check_file(path: &Path) -> anyhow::Result<(String, Vec<(usize, String)>)> {
    let one = |r: anyhow::Result<()>| match r {
        Ok(()) => vec![],
        Err(e) => vec![(0, format!("{e:#}"))],
    };
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path)?;
        let problems = match Report::from_json(&text) {
            Ok(_) => vec![],
            Err(e) => vec![(e.line(), e.to_string())],
        };
        return Ok(("report".into(), problems));
    }
    let kind = files::header_type(path)?;
    let open = || File::open(path).map(BufReader::new);
    let problems = match kind.as_str() {
        "scenario" => one(files::scenario(path).map(drop)),
        "script" => one(files::script(path).map(drop)),
        "header" => match files::trace(path) {
            Ok(t) => check_trace(&t).into_iter().map(|m| (0, m)).collect(),
            Err(e) => vec![(0, format!("{e:#}"))],
        },
        "train_corpus" => validate_corpus(open()?)
            .into_iter()
            .map(|d| (d.line, d.message))
            .collect(),
        "train_input" => match TrainInput::read_jsonl(open()?) {
            Ok(records) => records
                .into_iter()
                .filter_map(|(line, r)| r.assemble().err().map(|e| (line, e.to_string())))
                .collect(),
            Err(e) => vec![(e.line().unwrap_or(0), e.to_string())],
        },
        "ground_truth" => match read_ground_truth(open()?) {
            Ok(calls) => match validate_ground_truth(&calls) {
                Ok(()) => vec![],
                Err(e) => vec![(0, e.to_string())],
            },
            Err(e) => vec![(e.line().unwrap_or(0), e.to_string())],
        },
        "labels" => one(files::labels(path).map(drop)),
        "expected" => jsonl::records::<serde_json::Value, _>(open()?)
            .skip(1)
            .filter_map(|r| match r {
                Ok((line, v)) if v.get("scenario_id").and_then(|x| x.as_str()).is_none() => {
                    Some((line, "record has no scenario_id".to_string()))
                }
                Ok(_) => None,
                Err(e) => Some((e.line().unwrap_or(0), e.to_string())),
            })
            .collect(),
        other => vec![(1, format!("unknown file type {other:?}"))],
    };
    let kind = if kind == "header" {
        "trace".into()
    } else {
        kind
    };
    Ok((kind, problems))
}

pub fn validate(paths: &[PathBuf]) -> anyhow::Result<u8> {
    let mut bad = 0;
    for p in paths {
        let (kind, problems) = match check_file(p) {
            Ok(r) => r,
            Err(e) => ("unknown".into(), vec![(0, format!("{e:#}"))]),
        };
        if problems.is_empty() {
            println!("{}: ok ({kind})", p.display());
            continue;
        }
        bad += 1;
        for (line, msg) in problems {
            // Loader errors already carry the path.
            if msg.starts_with(&*p.to_string_lossy()) {
                println!("{msg}");
            } else if line > 0 {
                println!("{}:{line}: {msg}", p.display());
            } else {
                println!("{}: {msg}", p.display());
            }
        }
    }
    if bad > 0 {
        eprintln!("{bad} of {} files have problems", paths.len());
        Ok(EXIT_INVALID)
    } else {
        Ok(EXIT_OK)
    }
}

pub struct GenerateOptions {
    pub params: SyntheticParams,
    pub count: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Serialize)]
struct ExpectedLine<'a> {
    scenario_id: &'a str,
    seed: u64,
    #[serde(flatten)]
    expected: &'a listenthink::scenario_io::Expectation,
}

/// Writes `<id>.scenario.jsonl` and `<id>.script.jsonl` per case plus an
/// `expected.jsonl` summary.
pub fn generate(opts: &GenerateOptions) -> anyhow::Result<u8> {
    std::fs::create_dir_all(&opts.output_dir)
        .with_context(|| format!("creating {}", opts.output_dir.display()))?;
    let mut expected = Vec::new();
    jsonl::write_line(&mut expected, &serde_json::json!({"type": "expected"}))?;
    for i in 0..opts.count as u64 {
        let seed = opts.seed.wrapping_add(i);
        let case = generate_synthetic(seed, &opts.params).map_err(invalid)?;
        let stem = file_stem(&case.scenario.id);
        let script = listenthink::scenario_io::Script {
            scenario_id: case.scenario.id.clone(),
            entries: case.script.clone(),
        };
        for (name, body) in [
            (
                format!("{stem}.scenario.jsonl"),
                case.scenario.to_jsonl_string(),
            ),
            (format!("{stem}.script.jsonl"), script.to_jsonl_string()),
        ] {
            let path = opts.output_dir.join(name);
            write_atomic(&path, body.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        jsonl::write_line(
            &mut expected,
            &ExpectedLine {
                scenario_id: &case.scenario.id,
                seed,
                expected: &case.expected,
            },
        )?;
    }
    let path = opts.output_dir.join("expected.jsonl");
    write_atomic(&path, &expected).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {} cases to {}",
        opts.count,
        opts.output_dir.display()
    );
    Ok(EXIT_OK)
}

pub fn params(
    task: Task,
    mode: Mode,
    session: &SessionConfig,
    overrides: &crate::GenerateArgs,
) -> SyntheticParams {
    let mut p = match task {
        Task::Interrupt => SyntheticParams::interrupt(),
        Task::ToolCall => SyntheticParams::tool_call(),
    };
    p.mode = mode;
    p.chunking = session.chunking.clone();
    if let Some(n) = overrides.n_words {
        p.n_words = n;
    }
    if let Some(d) = overrides.duration {
        p.duration = d;
    }
    if let Some(n) = overrides.n_calls {
        p.n_calls = n;
    }
    if let Some(n) = overrides.n_failed {
        p.n_failed = n;
    }
    if let Some(plan) = &overrides.interrupt {
        p.interrupt = *plan;
    }
    p
}

pub fn parse_plan(s: &str) -> Result<InterruptPlan, String> {
    match s {
        "random" => Ok(InterruptPlan::Random),
        "never" => Ok(InterruptPlan::Never),
        k => k
            .parse()
            .map(InterruptPlan::At)
            .map_err(|_| format!("expected random, never or a chunk index, got {k:?}")),
    }
}

pub fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "interrupt" => Ok(Task::Interrupt),
        "tool-call" | "tool_call" => Ok(Task::ToolCall),
        other => Err(format!("unknown task {other:?}")),
    }
}

/// Resolves the `simulate` options from flags and the config file.
pub fn simulate_options(
    file: &FileConfig,
    a: &crate::SimulateArgs,
) -> anyhow::Result<SimulateOptions> {
    Ok(SimulateOptions {
        mode: config::mode(file, &a.session),
        session: config::session(file, &a.session)?,
        backend: config::backend(file, &a.backend, &a.timeout)?,
        output_dir: config::output_dir(file, &a.output),
        jobs: a.backend.jobs.or(file.jobs).unwrap_or(0),
    })
}
