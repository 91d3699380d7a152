//! Earliest-callable times and their placement into thinking chunks.
//!
//! A call becomes callable once every literal argument has been spoken and
//! every call it depends on is callable. Thinking chunk `R_i` conditions on
//! speech up to `i·t_chunk`, so a call with earliest time `e` first fits in
//! chunk `ceil(e / t_chunk)`.

use std::collections::{BTreeMap, BTreeSet};

use super::{GroundTruthCall, ToolEnvironment, ToolError, ValueSource};
use crate::timeline::{ChunkingConfig, WordTiming};

/// Indices into `calls` in dependency order; ties broken by ascending id.
pub fn topological_order(calls: &[GroundTruthCall]) -> Result<Vec<usize>, ToolError> {
    let index_of: BTreeMap<u32, usize> = calls.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let mut indegree = vec![0usize; calls.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); calls.len()];
    for (i, c) in calls.iter().enumerate() {
        for dep in &c.depends_on {
            let Some(&d) = index_of.get(dep) else {
                return Err(ToolError::UnknownDependency {
                    id: c.id,
                    dependency: *dep,
                });
            };
            indegree[i] += 1;
            children[d].push(i);
        }
    }
    let mut ready: BTreeSet<(u32, usize)> = calls
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, c)| (c.id, i))
        .collect();
    let mut order = Vec::with_capacity(calls.len());
    while let Some(next) = ready.pop_first() {
        let i = next.1;
        order.push(i);
        for &child in &children[i] {
            indegree[child] -= 1;
            if indegree[child] == 0 {
                ready.insert((calls[child].id, child));
            }
        }
    }
    if order.len() < calls.len() {
        let stuck = calls
            .iter()
            .enumerate()
            .filter(|(i, _)| indegree[*i] > 0)
            .map(|(_, c)| c.id)
            .collect();
        return Err(ToolError::Cycle(stuck));
    }
    Ok(order)
}

fn earliest_with(
    gt: &GroundTruthCall,
    words: &[WordTiming],
    value_spans: &BTreeMap<String, ValueSource>,
    scheduled: &dyn Fn(u32) -> Option<Option<f64>>,
) -> Result<f64, ToolError> {
    let mut t = 0.0f64;
    for argument in gt.arguments.keys() {
        match value_spans.get(argument) {
            None => {
                return Err(ToolError::MissingSpan {
                    id: gt.id,
                    argument: argument.clone(),
                })
            }
            Some(ValueSource::Dependency) => {}
            Some(ValueSource::Span([first, last])) => {
                if first > last || *last >= words.len() {
                    return Err(ToolError::BadSpan {
                        id: gt.id,
                        argument: argument.clone(),
                        first: *first,
                        last: *last,
                    });
                }
                t = t.max(words[*last].end);
            }
        }
    }
    for &dep in &gt.depends_on {
        match scheduled(dep) {
            None => {
                return Err(ToolError::UnknownDependency {
                    id: gt.id,
                    dependency: dep,
                })
            }
            Some(None) => {
                return Err(ToolError::DependencyUnscheduled {
                    id: gt.id,
                    dependency: dep,
                })
            }
            Some(Some(e)) => t = t.max(e),
        }
    }
    Ok(t)
}

/// Earliest time `gt` can be issued: the latest end timestamp among the words
/// stating its literal arguments, or a dependency's earliest time if later.
/// Dependencies must already carry their earliest time in `env`.
pub fn earliest_call_time(
    gt: &GroundTruthCall,
    words: &[WordTiming],
    value_spans: &BTreeMap<String, ValueSource>,
    env: &ToolEnvironment,
) -> Result<f64, ToolError> {
    topological_order(&env.ground_truth)?;
    let lookup = |id: u32| {
        env.ground_truth
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.earliest_time)
    };
    earliest_with(gt, words, value_spans, &lookup)
}

/// Fills in `earliest_time` for every call from its own `value_spans`,
/// visiting calls in dependency order.
pub fn annotate_earliest_times(
    calls: &mut [GroundTruthCall],
    words: &[WordTiming],
) -> Result<(), ToolError> {
    let order = topological_order(calls)?;
    for i in order {
        let snapshot: BTreeMap<u32, Option<f64>> =
            calls.iter().map(|c| (c.id, c.earliest_time)).collect();
        let lookup = |id: u32| snapshot.get(&id).copied();
        let e = earliest_with(&calls[i], words, &calls[i].value_spans, &lookup)?;
        calls[i].earliest_time = Some(e);
    }
    Ok(())
}

/// Calls grouped by the thinking chunk in which they first become callable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChunkAssignment {
    by_chunk: BTreeMap<usize, Vec<u32>>,
}

impl ChunkAssignment {
    /// Call ids placed in chunk `index`, in dependency order.
    pub fn calls_in(&self, index: usize) -> &[u32] {
        self.by_chunk.get(&index).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True when chunk `index` has nothing to call and should carry the
    /// no-op template message.
    pub fn needs_template(&self, index: usize) -> bool {
        self.calls_in(index).is_empty()
    }

    pub fn chunk_of(&self, id: u32) -> Option<usize> {
        self.by_chunk
            .iter()
            .find(|(_, ids)| ids.contains(&id))
            .map(|(c, _)| *c)
    }

    pub fn last_chunk(&self) -> Option<usize> {
        self.by_chunk.keys().next_back().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[u32])> {
        self.by_chunk.iter().map(|(c, ids)| (*c, ids.as_slice()))
    }
}

/// Places each call in chunk `max(1, ceil(earliest_time / t_chunk))`.
pub fn assign_to_chunks(
    calls: &[GroundTruthCall],
    config: &ChunkingConfig,
) -> Result<ChunkAssignment, ToolError> {
    let order = topological_order(calls)?;
    let mut by_chunk: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for i in order {
        let c = &calls[i];
        let e = c
            .earliest_time
            .ok_or(ToolError::MissingEarliestTime(c.id))?;
        by_chunk
            .entry(config.chunk_index_at(e))
            .or_default()
            .push(c.id);
    }
    Ok(ChunkAssignment { by_chunk })
}
