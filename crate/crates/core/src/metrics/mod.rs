//! Evaluation quantities computed from finished traces.
//!
//! Aggregation visits traces sorted by scenario id, so every report is
//! independent of input order down to the last bit. Means and ratios over
//! empty sets are `None`.

mod judge;

pub use judge::{
    answer_value, AnswerKeyJudge, GroundedResponseJudge, InterruptJudge, JudgeError, QualityJudge,
    QualityScore, RemoteJudge,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::chunk_tokens;
use crate::scenario_io::Scenario;
use crate::tool_runtime::Phase;
use crate::trace::{TraceStatus, TurnTrace};

/// Width of one latency histogram bucket, in seconds.
pub const HISTOGRAM_BUCKET_SECS: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("duplicate scenario id {0:?}")]
    DuplicateScenario(String),
    #[error("no label for scenario {0:?}")]
    MissingLabel(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid label for {id:?}: {message}")]
    BadLabel { id: String, message: String },
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Correct,
    Wrong,
}

/// Ground truth for an interruption item. In files, `t_error: -1` means the
/// user made no error, and the subset may then be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabel", into = "RawLabel")]
pub struct InterruptLabel {
    pub scenario_id: String,
    pub subset: Subset,
    pub t_error: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    scenario_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subset: Option<Subset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_error: Option<f64>,
}

impl TryFrom<RawLabel> for InterruptLabel {
    type Error = String;
    fn try_from(raw: RawLabel) -> Result<Self, String> {
        let t_error = match raw.t_error {
            Some(-1.0) => None,
            Some(t) if t.is_finite() && t >= 0.0 => Some(t),
            Some(t) => return Err(format!("t_error must be >= 0 or -1, got {t}")),
            None => None,
        };
        let subset = match (raw.subset, t_error) {
            (Some(Subset::Wrong), None) => return Err("a wrong-subset label needs t_error".into()),
            (Some(Subset::Correct), Some(_)) => {
                return Err("a correct-subset label cannot carry t_error".into())
            }
            (Some(s), _) => s,
            (None, Some(_)) => Subset::Wrong,
            (None, None) => Subset::Correct,
        };
        Ok(InterruptLabel {
            scenario_id: raw.scenario_id,
            subset,
            t_error,
        })
    }
}

impl From<InterruptLabel> for RawLabel {
    fn from(l: InterruptLabel) -> Self {
        RawLabel {
            scenario_id: l.scenario_id,
            subset: Some(l.subset),
            t_error: l.t_error,
        }
    }
}

impl InterruptLabel {
    pub fn correct(id: impl Into<String>) -> Self {
        Self {
            scenario_id: id.into(),
            subset: Subset::Correct,
            t_error: None,
        }
    }

    pub fn wrong(id: impl Into<String>, t_error: f64) -> Self {
        Self {
            scenario_id: id.into(),
            subset: Subset::Wrong,
            t_error: Some(t_error),
        }
    }
}

/// `t_interrupt − t_error`; `None` when either side is missing. Negative
/// values are legitimate.
pub fn interruption_latency(trace: &TurnTrace, label: &InterruptLabel) -> Option<f64> {
    Some(trace.t_interrupt? - label.t_error?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower edge in seconds.
    pub lower: f64,
    /// Exclusive upper edge in seconds.
    pub upper: f64,
    pub count: usize,
}

/// Non-empty buckets of width [`HISTOGRAM_BUCKET_SECS`], ascending.
pub fn latency_histogram(latencies: &[f64]) -> Vec<HistogramBucket> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for l in latencies {
        *counts
            .entry((l / HISTOGRAM_BUCKET_SECS).floor() as i64)
            .or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(b, count)| HistogramBucket {
            lower: b as f64 * HISTOGRAM_BUCKET_SECS,
            upper: (b + 1) as f64 * HISTOGRAM_BUCKET_SECS,
            count,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub total: usize,
    pub interrupted: usize,
    pub interrupt_ratio: Option<f64>,
    pub valid_interruptions: usize,
    pub valid_interrupt_ratio: Option<f64>,
    /// Wrong subset only.
    pub mean_latency: Option<f64>,
    pub latency_histogram: Vec<HistogramBucket>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterruptReport {
    pub correct: SubsetReport,
    pub wrong: SubsetReport,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Everything the user said up to an interruption: the delivered chunks
/// plus the chunk spoken while the model was thinking.
pub fn user_prefix(trace: &TurnTrace) -> Vec<String> {
    let mut out: Vec<String> = trace.delivered_chunks().flat_map(chunk_tokens).collect();
    if let Some(o) = &trace.undelivered_overlap {
        out.extend(chunk_tokens(o));
    }
    out
}

fn sorted_unique(traces: &[TurnTrace]) -> Result<Vec<&TurnTrace>, MetricsError> {
    let mut by_id: BTreeMap<&str, &TurnTrace> = BTreeMap::new();
    for t in traces {
        if by_id.insert(t.scenario_id.as_str(), t).is_some() {
            return Err(MetricsError::DuplicateScenario(t.scenario_id.clone()));
        }
    }
    Ok(by_id.into_values().collect())
}

pub fn interrupt_report(
    traces: &[TurnTrace],
    labels: &[InterruptLabel],
    judge: &dyn InterruptJudge,
) -> Result<InterruptReport, MetricsError> {
    let traces = sorted_unique(traces)?;
    let mut label_of: BTreeMap<&str, &InterruptLabel> = BTreeMap::new();
    for l in labels {
        if l.subset == Subset::Wrong && l.t_error.is_none() {
            return Err(MetricsError::BadLabel {
                id: l.scenario_id.clone(),
                message: "wrong-subset label without t_error".into(),
            });
        }
        if label_of.insert(l.scenario_id.as_str(), l).is_some() {
            return Err(MetricsError::DuplicateScenario(l.scenario_id.clone()));
        }
    }

    let mut report = InterruptReport::default();
    let mut latencies: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for trace in traces {
        let label = label_of
            .get(trace.scenario_id.as_str())
            .ok_or_else(|| MetricsError::MissingLabel(trace.scenario_id.clone()))?;
        let (sub, lat) = match label.subset {
            Subset::Correct => (&mut report.correct, &mut latencies[0]),
            Subset::Wrong => (&mut report.wrong, &mut latencies[1]),
        };
        sub.total += 1;
        if trace.interrupted_at.is_none() {
            continue;
        }
        sub.interrupted += 1;
        let response: &[String] = trace.response().map_or(&[], |r| &r.tokens);
        if judge.is_valid(&user_prefix(trace), response)? {
            sub.valid_interruptions += 1;
        }
        if label.subset == Subset::Wrong {
            if let Some(l) = interruption_latency(trace, label) {
                lat.push(l);
            }
        }
    }
    for (sub, lat) in [
        (&mut report.correct, &latencies[0]),
        (&mut report.wrong, &latencies[1]),
    ] {
        sub.interrupt_ratio = ratio(sub.interrupted, sub.total);
        sub.valid_interrupt_ratio = ratio(sub.valid_interruptions, sub.interrupted);
        sub.mean_latency = mean(lat);
        sub.latency_histogram = latency_histogram(lat);
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolReport {
    pub scenarios: usize,
    pub early_hits: usize,
    pub late_hits: usize,
    pub total_gt: usize,
    pub early_accuracy: Option<f64>,
    pub late_accuracy: Option<f64>,
    /// `early_accuracy + late_accuracy`, so the identity holds exactly.
    pub total_accuracy: Option<f64>,
    pub successes: usize,
    pub success_rate: Option<f64>,
    /// Over completed, uninterrupted traces.
    pub mean_post_turn_tokens: Option<f64>,
    /// Over traces with a response.
    pub correctness: Option<f64>,
    pub completeness: Option<f64>,
}

/// Ground-truth ids consumed by a trace, with the phase of each id's first
/// consumption.
pub fn first_hits(trace: &TurnTrace) -> BTreeMap<u32, Phase> {
    let mut hits = BTreeMap::new();
    for (_, _, outcome) in trace.exchanges() {
        if outcome.is_error || outcome.replayed {
            continue;
        }
        if let Some(id) = outcome.matched {
            hits.entry(id).or_insert(outcome.phase);
        }
    }
    hits
}

pub fn tool_report(
    traces: &[TurnTrace],
    scenarios: &[Scenario],
    judge: &dyn QualityJudge,
) -> Result<ToolReport, MetricsError> {
    let traces = sorted_unique(traces)?;
    let mut scenario_of: BTreeMap<&str, &Scenario> = BTreeMap::new();
    for s in scenarios {
        if scenario_of.insert(s.id.as_str(), s).is_some() {
            return Err(MetricsError::DuplicateScenario(s.id.clone()));
        }
    }
    let mut r = ToolReport::default();
    let mut post_turn = Vec::new();
    let mut correctness = Vec::new();
    let mut completeness = Vec::new();
    for trace in traces {
        let scenario = scenario_of
            .get(trace.scenario_id.as_str())
            .ok_or_else(|| MetricsError::UnknownScenario(trace.scenario_id.clone()))?;
        r.scenarios += 1;
        let ids: BTreeSet<u32> = scenario.ground_truth_calls.iter().map(|c| c.id).collect();
        r.total_gt += ids.len();
        let hits = first_hits(trace);
        for (id, phase) in &hits {
            if !ids.contains(id) {
                continue;
            }
            match phase {
                Phase::Early => r.early_hits += 1,
                Phase::Late => r.late_hits += 1,
            }
        }
        if !ids.is_empty() && ids.iter().all(|id| hits.contains_key(id)) {
            r.successes += 1;
        }
        if trace.status == TraceStatus::Completed && trace.interrupted_at.is_none() {
            post_turn.push(trace.post_turn_tokens as f64);
        }
        if let Some(resp) = trace.response() {
            let q = judge.score(scenario, &resp.tokens)?;
            correctness.push(q.correctness as f64);
            completeness.push(q.completeness as f64);
        }
    }
    r.early_accuracy = ratio(r.early_hits, r.total_gt);
    r.late_accuracy = ratio(r.late_hits, r.total_gt);
    r.total_accuracy = r.early_accuracy.zip(r.late_accuracy).map(|(e, l)| e + l);
    r.success_rate = ratio(r.successes, r.scenarios);
    r.mean_post_turn_tokens = mean(&post_turn);
    r.correctness = mean(&correctness);
    r.completeness = mean(&completeness);
    Ok(r)
}

/// The `*.report.json` document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(rename = "type")]
    pub kind: ReportKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interrupt: Option<InterruptReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool: Option<ToolReport>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    #[default]
    Report,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.1}", v * 100.0))
}

fn num(x: Option<f64>, digits: usize) -> String {
    x.map_or("-".into(), |v| format!("{v:.digits$}"))
}

/// Plain-text tables, one row per subset (interruption) or one summary row
/// (tool use).
pub fn render_table(report: &Report) -> String {
    let mut out = String::new();
    if let Some(ir) = &report.interrupt {
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>12} {:>10} {:>12}",
            "subset", "n", "interrupt%", "valid%", "latency(s)"
        );
        for (name, s) in [("correct", &ir.correct), ("wrong", &ir.wrong)] {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>12} {:>10} {:>12}",
                name,
                s.total,
                pct(s.interrupt_ratio),
                pct(s.valid_interrupt_ratio),
                num(s.mean_latency, 2)
            );
        }
    }
    if let Some(tr) = &report.tool {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}",
            "n", "early%", "late%", "total%", "success%", "latency", "correct", "complete"
        );
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}",
            tr.scenarios,
            pct(tr.early_accuracy),
            pct(tr.late_accuracy),
            pct(tr.total_accuracy),
            pct(tr.success_rate),
            num(tr.mean_post_turn_tokens, 1),
            num(tr.correctness, 2),
            num(tr.completeness, 2)
        );
    }
    out
}
