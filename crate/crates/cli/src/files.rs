//! Locating and loading input files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use listenthink::jsonl::{self, JsonlError};
use listenthink::metrics::InterruptLabel;
use listenthink::scenario_io::{Scenario, Script};
use listenthink::trace::TurnTrace;
use serde_json::Value;

use crate::invalid;

/// Expands directories to their files ending in `suffix`, sorted; plain
/// files are kept as given.
pub fn expand(paths: &[PathBuf], suffix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| invalid(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(suffix))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn located(path: &Path, e: JsonlError) -> anyhow::Error {
    match e.line() {
        Some(line) if line > 0 => invalid(format!("{}:{line}: {e}", path.display())),
        _ => invalid(format!("{}: {e}", path.display())),
    }
}

/// The `type` of the first record, which names the file kind.
pub fn header_type(path: &Path) -> anyhow::Result<String> {
    let mut first = String::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if !line.trim().is_empty() {
            first = line;
            break;
        }
    }
    let v: Value =
        serde_json::from_str(&first).map_err(|e| invalid(format!("{}:1: {e}", path.display())))?;
    v.get("type")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| invalid(format!("{}:1: header has no \"type\"", path.display())))
}

pub fn scenario(path: &Path) -> anyhow::Result<Scenario> {
    Scenario::read_jsonl(open(path)?).map_err(|e| located(path, e))
}

pub fn script(path: &Path) -> anyhow::Result<Script> {
    let s = Script::read_jsonl(open(path)?).map_err(|e| located(path, e))?;
    s.validate()
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(s)
}

pub fn trace(path: &Path) -> anyhow::Result<TurnTrace> {
    TurnTrace::read_jsonl(open(path)?).map_err(|e| located(path, e))
}

/// Loads scenarios, rejecting duplicate ids.
pub fn scenarios(paths: &[PathBuf]) -> anyhow::Result<Vec<(PathBuf, Scenario)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for p in expand(paths, ".scenario.jsonl")? {
        let s = scenario(&p)?;
        if let Some(prev) = seen.insert(s.id.clone(), p.clone()) {
            return Err(invalid(format!(
                "scenario id {:?} appears in both {} and {}",
                s.id,
                prev.display(),
                p.display()
            )));
        }
        out.push((p, s));
    }
    Ok(out)
}

/// Scripts indexed by scenario id.
pub fn scripts(paths: &[PathBuf]) -> anyhow::Result<BTreeMap<String, Script>> {
    let mut out = BTreeMap::new();
    for p in expand(paths, ".script.jsonl")? {
        let s = script(&p)?;
        let id = s.scenario_id.clone();
        if out.insert(id.clone(), s).is_some() {
            return Err(invalid(format!(
                "{}: a second script for scenario {id:?}",
                p.display()
            )));
        }
    }
    Ok(out)
}

/// A `{"type":"labels"}` file followed by one label per line.
pub fn labels(path: &Path) -> anyhow::Result<Vec<InterruptLabel>> {
    let mut records = jsonl::records::<Value, _>(open(path)?);
    match records.next() {
        Some(Ok((_, v))) if v.get("type").and_then(Value::as_str) == Some("labels") => {}
        Some(Ok((line, _))) => {
            return Err(invalid(format!(
                "{}:{line}: first line must be a labels header",
                path.display()
            )))
        }
        Some(Err(e)) => return Err(located(path, e)),
        None => return Err(located(path, JsonlError::Empty)),
    }
    records
        .map(|r| {
            let (line, v) = r.map_err(|e| located(path, e))?;
            serde_json::from_value(v)
                .map_err(|e| invalid(format!("{}:{line}: {e}", path.display())))
        })
        .collect()
}

/// A scenario id made safe for use as a file name.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_are_filesystem_safe() {
        assert_eq!(file_stem("synth-int-3"), "synth-int-3");
        assert_eq!(file_stem("a/b c"), "a_b_c");
    }
}
