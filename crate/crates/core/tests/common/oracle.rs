//! A second, deliberately naive implementation of the reports. It reads
//! traces back from their serialized form as untyped JSON and recounts
//! everything from scratch, so it shares no aggregation code with the
//! library. Judges are black boxes to both sides.

use std::collections::{BTreeMap, BTreeSet};

use listenthink::metrics::{
    InterruptJudge, InterruptLabel, InterruptReport, QualityJudge, Subset, SubsetReport, ToolReport,
};
use listenthink::scenario_io::Scenario;
use listenthink::trace::TurnTrace;
use serde_json::Value;

const MARKERS: [&str; 8] = [
    "[EOPA]",
    "[EOA]",
    "<think>",
    "</think>",
    "[INTERRUPT]",
    "[NO_INTERRUPT]",
    "<tool_call>",
    "</tool_call>",
];

struct Scan {
    id: String,
    lines: Vec<Value>,
}

impl Scan {
    fn of(trace: &TurnTrace) -> Scan {
        let text = trace.to_jsonl_string();
        let lines: Vec<Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let id = lines[0]["scenario_id"].as_str().unwrap().to_string();
        Scan { id, lines }
    }

    fn of_type(&self, kind: &str) -> impl Iterator<Item = &Value> {
        let kind = kind.to_string();
        self.lines
            .iter()
            .filter(move |l| l["type"] == kind.as_str())
    }

    fn summary(&self) -> &Value {
        self.lines.last().unwrap()
    }

    fn response(&self) -> Option<Vec<String>> {
        self.of_type("response_emitted")
            .last()
            .map(|r| strings(&r["response"]["tokens"]))
    }

    /// Words said up to the cut, as the model would have seen them.
    fn heard(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut push_words = |chunk: &Value| {
            for w in chunk["words"].as_array().unwrap() {
                out.push(w["text"].as_str().unwrap().to_string());
            }
        };
        for e in self.of_type("chunk_delivered") {
            push_words(&e["chunk"]);
        }
        let overlap = &self.summary()["undelivered_overlap"];
        if !overlap.is_null() {
            push_words(overlap);
        }
        // Words never contain markers in the generated data, so splitting
        // on whitespace matches the library tokenizer here.
        out.iter()
            .flat_map(|w| w.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .collect()
    }
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

fn by_id(traces: &[TurnTrace]) -> Option<Vec<Scan>> {
    let mut scans: Vec<Scan> = traces.iter().map(Scan::of).collect();
    scans.sort_by(|a, b| a.id.cmp(&b.id));
    for w in scans.windows(2) {
        if w[0].id == w[1].id {
            return None;
        }
    }
    Some(scans)
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    if b == 0 {
        None
    } else {
        Some(a as f64 / b as f64)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    Some(s / v.len() as f64)
}

/// `(lower, count)` for every non-empty 2-second bucket.
pub fn histogram(latencies: &[f64]) -> Vec<(f64, usize)> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for l in latencies {
        *counts.entry((l / 2.0).floor() as i64).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k as f64 * 2.0, c))
        .collect()
}

fn is_marker(t: &str) -> bool {
    MARKERS.contains(&t)
}

/// Per-subset `(latency, trace index)` pairs.
pub type Latencies = [Vec<(f64, usize)>; 2];

pub fn interrupt_report(
    traces: &[TurnTrace],
    labels: &[InterruptLabel],
    judge: &dyn InterruptJudge,
) -> Option<(InterruptReport, Latencies)> {
    let scans = by_id(traces)?;
    let mut report = InterruptReport::default();
    let mut lat = [Vec::new(), Vec::new()];
    for scan in &scans {
        let label = labels.iter().find(|l| l.scenario_id == scan.id)?;
        let wrong = label.subset == Subset::Wrong;
        let sub = if wrong {
            &mut report.wrong
        } else {
            &mut report.correct
        };
        sub.total += 1;
        let s = scan.summary();
        if s["interrupted_at"].is_null() {
            continue;
        }
        sub.interrupted += 1;
        let heard: Vec<String> = scan.heard().into_iter().filter(|t| !is_marker(t)).collect();
        let response = scan.response().unwrap_or_default();
        if judge.is_valid(&heard, &response).ok()? {
            sub.valid_interruptions += 1;
        }
        if wrong {
            if let (Some(ti), Some(te)) = (s["t_interrupt"].as_f64(), label.t_error) {
                lat[1].push(ti - te);
            }
        }
    }
    for (sub, l) in [(&mut report.correct, &lat[0]), (&mut report.wrong, &lat[1])] {
        fill_subset(sub, l);
    }
    let hist = [histogram(&lat[0]), histogram(&lat[1])];
    Some((report, hist))
}

fn fill_subset(sub: &mut SubsetReport, lat: &[f64]) {
    sub.interrupt_ratio = ratio(sub.interrupted, sub.total);
    sub.valid_interrupt_ratio = ratio(sub.valid_interruptions, sub.interrupted);
    sub.mean_latency = mean(lat);
    sub.latency_histogram = Vec::new();
}

pub fn tool_report(
    traces: &[TurnTrace],
    scenarios: &[Scenario],
    judge: &dyn QualityJudge,
) -> Option<ToolReport> {
    let scans = by_id(traces)?;
    let mut r = ToolReport::default();
    let mut post = Vec::new();
    let mut corr = Vec::new();
    let mut comp = Vec::new();
    for scan in &scans {
        let scenario = scenarios.iter().find(|s| s.id == scan.id)?;
        r.scenarios += 1;
        let gt: BTreeSet<u64> = scenario
            .ground_truth_calls
            .iter()
            .map(|c| c.id as u64)
            .collect();
        r.total_gt += gt.len();
        let mut seen: BTreeMap<u64, String> = BTreeMap::new();
        for e in scan.of_type("tool_exchange") {
            let o = &e["outcome"];
            if o["is_error"] == true || o["replayed"] == true {
                continue;
            }
            if let Some(id) = o["matched"].as_u64() {
                seen.entry(id)
                    .or_insert_with(|| o["phase"].as_str().unwrap().to_string());
            }
        }
        for id in &gt {
            match seen.get(id).map(String::as_str) {
                Some("early") => r.early_hits += 1,
                Some("late") => r.late_hits += 1,
                _ => {}
            }
        }
        if !gt.is_empty() && gt.iter().all(|id| seen.contains_key(id)) {
            r.successes += 1;
        }
        let s = scan.summary();
        if s["status"] == "completed" && s["interrupted_at"].is_null() {
            post.push(s["post_turn_tokens"].as_u64().unwrap() as f64);
        }
        if let Some(resp) = scan.response() {
            let q = judge.score(scenario, &resp).ok()?;
            corr.push(q.correctness as f64);
            comp.push(q.completeness as f64);
        }
    }
    r.early_accuracy = ratio(r.early_hits, r.total_gt);
    r.late_accuracy = ratio(r.late_hits, r.total_gt);
    r.total_accuracy = match (r.early_accuracy, r.late_accuracy) {
        (Some(e), Some(l)) => Some(e + l),
        _ => None,
    };
    r.success_rate = ratio(r.successes, r.scenarios);
    r.mean_post_turn_tokens = mean(&post);
    r.correctness = mean(&corr);
    r.completeness = mean(&comp);
    Some(r)
}

/// Compares a library report with the oracle's, field by field.
pub fn same_interrupt(
    lib: &InterruptReport,
    oracle: &(InterruptReport, [Vec<(f64, usize)>; 2]),
) -> Result<(), String> {
    let (report, hists) = oracle;
    let pairs = [
        ("correct", &lib.correct, &report.correct, &hists[0]),
        ("wrong", &lib.wrong, &report.wrong, &hists[1]),
    ];
    for (name, a, b, hist) in pairs {
        let got: Vec<(f64, usize)> = a
            .latency_histogram
            .iter()
            .map(|h| (h.lower, h.count))
            .collect();
        if &got != hist {
            return Err(format!("{name} histogram differs: {got:?} vs {hist:?}"));
        }
        if a.latency_histogram.iter().any(|h| h.upper != h.lower + 2.0) {
            return Err(format!("{name} histogram has a bucket not 2 s wide"));
        }
        let mut a = a.clone();
        a.latency_histogram = Vec::new();
        if &a != b {
            return Err(format!("{name} subset differs: {a:?} vs {b:?}"));
        }
    }
    Ok(())
}
