use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{apply_stop_rules, Backend, BackendError, GenerationRequest, GenerationResult};

/// The tokens a scripted model produces on its `step`-th generation call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub step: usize,
    pub tokens: Vec<String>,
}

impl ScriptEntry {
    pub fn new<S: Into<String>>(step: usize, tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            step,
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

/// Tokens scripted for `step`, or an empty list when the script is silent
/// at that step.
pub fn scripted_lookup(script: &[ScriptEntry], step: usize) -> Vec<String> {
    script
        .iter()
        .find(|e| e.step == step)
        .map(|e| e.tokens.clone())
        .unwrap_or_default()
}

/// Replays a script. The result of a call depends only on the script, the
/// step and the request's `max_tokens`/`stop` fields; the context is ignored.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    steps: BTreeMap<usize, Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(script: &[ScriptEntry]) -> Self {
        Self {
            steps: script.iter().map(|e| (e.step, e.tokens.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn generate(
        &self,
        step: usize,
        request: &GenerationRequest,
    ) -> Result<GenerationResult, BackendError> {
        let tokens = self.steps.get(&step).cloned().unwrap_or_default();
        Ok(apply_stop_rules(
            tokens,
            request.max_tokens,
            &request.stop_markers,
        ))
    }
}
