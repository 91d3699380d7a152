//! Helpers shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

pub mod http;
pub mod oracle;

use std::path::PathBuf;

use listenthink::backend::ScriptedBackend;
use listenthink::orchestrator::run;
use listenthink::scenario_io::SyntheticCase;
use listenthink::trace::{Mode, SessionConfig, TurnTrace};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

/// Runs a generated case against its own script.
pub fn run_case(case: &SyntheticCase, mode: Mode, config: &SessionConfig) -> TurnTrace {
    let backend = ScriptedBackend::new(&case.script);
    let mut env = case.scenario.tool_environment();
    match run(mode, &case.scenario, &backend, &mut env, config) {
        Ok(t) => t,
        Err(e) => panic!("{} failed: {e}", case.scenario.id),
    }
}
