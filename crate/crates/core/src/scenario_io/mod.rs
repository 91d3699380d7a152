//! Scenario and script files.
//!
//! Every file is line-delimited JSON whose first line is a typed header.
//! A scenario file looks like:
//!
//! ```text
//! {"type":"scenario","version":1,"id":"q17","task":"tool_call","system_preamble":null}
//! {"type":"word","text":"Help","start":0.0,"end":0.31}
//! {"type":"tool","name":"Search_Flights","description":"...","parameters":{...}}
//! {"type":"call","id":1,"name":"Search_Flights","arguments":{...},"response":"..."}
//! ```
//!
//! Interrupt scenarios carry one `label` line instead of tools and calls.

mod synth;

pub use synth::{generate_synthetic, Expectation, InterruptPlan, SyntheticCase, SyntheticParams};

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::ScriptEntry;
use crate::jsonl::{self, JsonlError};
use crate::metrics::InterruptLabel;
use crate::timeline::{validate_words, WordTiming};
use crate::tokens::tokenize;
use crate::tool_runtime::{validate_ground_truth, GroundTruthCall, ToolEnvironment, ToolSpec};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Interrupt,
    ToolCall,
}

/// One test instance: a timed user turn plus what is needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub task: Task,
    pub words: Vec<WordTiming>,
    pub tools: Vec<ToolSpec>,
    pub ground_truth_calls: Vec<GroundTruthCall>,
    pub label: Option<InterruptLabel>,
    pub system_preamble: Option<String>,
}

impl Scenario {
    /// Full invariant check; loaders call this before returning.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("scenario id is empty".into());
        }
        if self.words.is_empty() {
            return Err(format!("scenario {}: transcript has no words", self.id));
        }
        validate_words(&self.words).map_err(|e| format!("scenario {}: {e}", self.id))?;
        match self.task {
            Task::Interrupt => {
                let label = self
                    .label
                    .as_ref()
                    .ok_or_else(|| format!("scenario {}: interrupt task needs a label", self.id))?;
                if label.scenario_id != self.id {
                    return Err(format!(
                        "scenario {}: label names scenario {:?}",
                        self.id, label.scenario_id
                    ));
                }
                if !self.tools.is_empty() || !self.ground_truth_calls.is_empty() {
                    return Err(format!(
                        "scenario {}: interrupt task must not carry tools or calls",
                        self.id
                    ));
                }
            }
            Task::ToolCall => {
                if self.ground_truth_calls.is_empty() {
                    return Err(format!(
                        "scenario {}: tool_call task needs ground_truth_calls",
                        self.id
                    ));
                }
                if self.label.is_some() {
                    return Err(format!(
                        "scenario {}: tool_call task must not carry an interrupt label",
                        self.id
                    ));
                }
                let mut names = std::collections::BTreeSet::new();
                for t in &self.tools {
                    if !names.insert(t.name.as_str()) {
                        return Err(format!("scenario {}: duplicate tool {:?}", self.id, t.name));
                    }
                }
                validate_ground_truth(&self.ground_truth_calls)
                    .map_err(|e| format!("scenario {}: {e}", self.id))?;
            }
        }
        Ok(())
    }

    /// Speech duration: end of the last word.
    pub fn duration(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.end)
    }

    /// Context prefix: the system preamble, then one compact JSON
    /// description per tool.
    pub fn preamble_tokens(&self) -> Vec<String> {
        let mut out = self
            .system_preamble
            .as_deref()
            .map(tokenize)
            .unwrap_or_default();
        for t in &self.tools {
            let json = serde_json::to_string(t).expect("tool specs serialize");
            out.extend(tokenize(&json));
        }
        out
    }

    pub fn tool_environment(&self) -> ToolEnvironment {
        ToolEnvironment::new(self.tools.clone(), self.ground_truth_calls.clone())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        jsonl::write_line(
            &mut w,
            &ScenarioLine::Scenario(ScenarioHeader {
                version: FORMAT_VERSION,
                id: self.id.clone(),
                task: self.task,
                system_preamble: self.system_preamble.clone(),
            }),
        )?;
        for word in &self.words {
            jsonl::write_line(&mut w, &ScenarioLine::Word(word.clone()))?;
        }
        for tool in &self.tools {
            jsonl::write_line(&mut w, &ScenarioLine::Tool(tool.clone()))?;
        }
        for call in &self.ground_truth_calls {
            jsonl::write_line(&mut w, &ScenarioLine::Call(call.clone()))?;
        }
        if let Some(label) = &self.label {
            jsonl::write_line(&mut w, &ScenarioLine::Label(label.clone()))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, JsonlError> {
        let mut lines = jsonl::records::<ScenarioLine, _>(r);
        let (line_no, first) = lines.next().ok_or(JsonlError::Empty)??;
        let ScenarioLine::Scenario(header) = first else {
            return Err(JsonlError::invalid(
                line_no,
                "first line must be a scenario header",
            ));
        };
        if header.version != FORMAT_VERSION {
            return Err(JsonlError::invalid(
                line_no,
                format!("unsupported scenario version {}", header.version),
            ));
        }
        let mut s = Scenario {
            id: header.id,
            task: header.task,
            words: Vec::new(),
            tools: Vec::new(),
            ground_truth_calls: Vec::new(),
            label: None,
            system_preamble: header.system_preamble,
        };
        for item in lines {
            let (line_no, rec) = item?;
            match rec {
                ScenarioLine::Scenario(_) => {
                    return Err(JsonlError::invalid(line_no, "duplicate scenario header"))
                }
                ScenarioLine::Word(w) => {
                    if let Some(prev) = s.words.last() {
                        if w.start < prev.end {
                            return Err(JsonlError::invalid(
                                line_no,
                                format!("word {:?} overlaps or precedes the previous word", w.text),
                            ));
                        }
                    }
                    if !(w.end > w.start && w.start >= 0.0) {
                        return Err(JsonlError::invalid(
                            line_no,
                            format!("word {:?} has invalid timestamps", w.text),
                        ));
                    }
                    s.words.push(w);
                }
                ScenarioLine::Tool(t) => s.tools.push(t),
                ScenarioLine::Call(c) => s.ground_truth_calls.push(c),
                ScenarioLine::Label(l) => {
                    if s.label.replace(l).is_some() {
                        return Err(JsonlError::invalid(line_no, "more than one label line"));
                    }
                }
            }
        }
        s.validate().map_err(|m| JsonlError::invalid(0, m))?;
        Ok(s)
    }

    pub fn from_jsonl_str(s: &str) -> Result<Self, JsonlError> {
        Self::read_jsonl(s.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub version: u32,
    pub id: String,
    pub task: Task,
    #[serde(default)]
    pub system_preamble: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioLine {
    Scenario(ScenarioHeader),
    Word(WordTiming),
    Tool(ToolSpec),
    Call(GroundTruthCall),
    Label(InterruptLabel),
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, JsonlError> {
    let f = std::fs::File::open(path)?;
    Scenario::read_jsonl(std::io::BufReader::new(f))
}

pub fn save_scenario(path: impl AsRef<Path>, scenario: &Scenario) -> std::io::Result<()> {
    jsonl::write_atomic(path.as_ref(), scenario.to_jsonl_string().as_bytes())
}

/// Standalone ground-truth call file: a `ground_truth` header followed by
/// one call record per line.
pub fn read_ground_truth<R: BufRead>(r: R) -> Result<Vec<GroundTruthCall>, JsonlError> {
    #[derive(Deserialize)]
    #[serde(tag = "type", rename_all = "snake_case")]
    enum Line {
        GroundTruth {},
        Call(GroundTruthCall),
    }
    let mut lines = jsonl::records::<Line, _>(r);
    let (line_no, first) = lines.next().ok_or(JsonlError::Empty)??;
    if !matches!(first, Line::GroundTruth {}) {
        return Err(JsonlError::invalid(
            line_no,
            "first line must be a ground_truth header",
        ));
    }
    let mut calls = Vec::new();
    for item in lines {
        match item? {
            (_, Line::Call(c)) => calls.push(c),
            (line_no, Line::GroundTruth {}) => {
                return Err(JsonlError::invalid(line_no, "duplicate header"))
            }
        }
    }
    validate_ground_truth(&calls).map_err(|e| JsonlError::invalid(0, e.to_string()))?;
    Ok(calls)
}

pub fn write_ground_truth<W: Write>(mut w: W, calls: &[GroundTruthCall]) -> std::io::Result<()> {
    w.write_all(b"{\"type\":\"ground_truth\"}\n")?;
    for c in calls {
        #[derive(Serialize)]
        struct Tagged<'a> {
            #[serde(rename = "type")]
            kind: &'static str,
            #[serde(flatten)]
            call: &'a GroundTruthCall,
        }
        jsonl::write_line(
            &mut w,
            &Tagged {
                kind: "call",
                call: c,
            },
        )?;
    }
    Ok(())
}

/// A script for the scripted backend, tied to one scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub scenario_id: String,
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ScriptLine {
    Script { scenario_id: String },
    Step(ScriptEntry),
}

impl Script {
    /// Steps must be unique and contiguous from 1.
    pub fn validate(&self) -> Result<(), String> {
        let mut steps: Vec<usize> = self.entries.iter().map(|e| e.step).collect();
        steps.sort_unstable();
        for (i, s) in steps.iter().enumerate() {
            if *s != i + 1 {
                return Err(format!(
                    "script for {}: steps must be unique and contiguous from 1 (found {s} at position {})",
                    self.scenario_id,
                    i + 1
                ));
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        jsonl::write_line(
            &mut w,
            &ScriptLine::Script {
                scenario_id: self.scenario_id.clone(),
            },
        )?;
        for e in &self.entries {
            jsonl::write_line(&mut w, &ScriptLine::Step(e.clone()))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, JsonlError> {
        let mut lines = jsonl::records::<ScriptLine, _>(r);
        let (line_no, first) = lines.next().ok_or(JsonlError::Empty)??;
        let ScriptLine::Script { scenario_id } = first else {
            return Err(JsonlError::invalid(
                line_no,
                "first line must be a script header",
            ));
        };
        let mut entries = Vec::new();
        for item in lines {
            match item? {
                (_, ScriptLine::Step(e)) => entries.push(e),
                (line_no, ScriptLine::Script { .. }) => {
                    return Err(JsonlError::invalid(line_no, "duplicate script header"))
                }
            }
        }
        let script = Script {
            scenario_id,
            entries,
        };
        script.validate().map_err(|m| JsonlError::invalid(0, m))?;
        Ok(script)
    }
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Script, JsonlError> {
    let f = std::fs::File::open(path)?;
    Script::read_jsonl(std::io::BufReader::new(f))
}
