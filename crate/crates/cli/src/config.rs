//! Run configuration: an optional TOML file whose fields mirror the
//! command-line flags, with flags (and their environment variables) taking
//! precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use listenthink::timeline::ChunkingConfig;
use listenthink::trace::{Mode, SessionConfig};
use serde::Deserialize;

use crate::invalid;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<Mode>,
    #[serde(default)]
    pub chunking: ChunkingFile,
    pub iteration_cap: Option<usize>,
    #[serde(default)]
    pub backend: BackendFile,
    #[serde(default)]
    pub judges: JudgesFile,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkingFile {
    pub t_chunk: Option<f64>,
    pub n_tps: Option<f64>,
    pub max_context: Option<usize>,
    pub final_budget: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendFile {
    #[serde(default)]
    pub scripted: Vec<PathBuf>,
    pub remote: Option<String>,
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgesFile {
    pub remote: Option<String>,
    pub timeout_secs: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file supplying any of the flags below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SessionArgs {
    /// shanks, call-after-listen or combined.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Chunk duration in seconds.
    #[arg(long)]
    pub t_chunk: Option<f64>,
    /// Generation rate in tokens per second.
    #[arg(long)]
    pub n_tps: Option<f64>,
    #[arg(long)]
    pub max_context: Option<usize>,
    /// Token budget for the thinking block after the user finishes.
    #[arg(long)]
    pub final_budget: Option<usize>,
    /// Generation calls allowed per thinking block.
    #[arg(long)]
    pub iteration_cap: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Script files or directories of `*.script.jsonl`, matched to
    /// scenarios by id.
    #[arg(long)]
    pub scripted: Vec<PathBuf>,
    /// Model server URL.
    #[arg(long, env = "LISTENTHINK_BACKEND_URL")]
    pub remote: Option<String>,
    /// Parallel sessions; 0 uses every core.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct JudgeArgs {
    /// Judge service URL; the built-in judges are used when absent.
    #[arg(long, env = "LISTENTHINK_JUDGE_URL")]
    pub judge_url: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TimeoutArgs {
    /// Timeout for remote requests, in seconds.
    #[arg(long, env = "LISTENTHINK_TIMEOUT_SECS")]
    pub timeout_secs: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    Scripted(Vec<PathBuf>),
    Remote { url: String, timeout_secs: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum JudgeChoice {
    Default,
    Remote { url: String, timeout_secs: f64 },
}

const DEFAULT_TIMEOUT_SECS: f64 = 60.0;

pub fn mode(file: &FileConfig, args: &SessionArgs) -> Mode {
    args.mode.or(file.mode).unwrap_or(Mode::Shanks)
}

pub fn session(file: &FileConfig, args: &SessionArgs) -> anyhow::Result<SessionConfig> {
    let d = ChunkingConfig::default();
    let c = &file.chunking;
    let chunking = ChunkingConfig {
        t_chunk: args.t_chunk.or(c.t_chunk).unwrap_or(d.t_chunk),
        n_tps: args.n_tps.or(c.n_tps).unwrap_or(d.n_tps),
        max_context: args.max_context.or(c.max_context).unwrap_or(d.max_context),
        final_budget: args.final_budget.or(c.final_budget),
    };
    chunking.validate().map_err(|e| invalid(e.to_string()))?;
    if chunking.n_tps <= 0.0 {
        return Err(invalid("n_tps must be > 0"));
    }
    let iteration_cap = args
        .iteration_cap
        .or(file.iteration_cap)
        .unwrap_or(SessionConfig::default().iteration_cap);
    if iteration_cap == 0 {
        return Err(invalid("iteration_cap must be > 0"));
    }
    Ok(SessionConfig {
        chunking,
        iteration_cap,
    })
}

fn timeout(file: Option<f64>, args: &TimeoutArgs) -> anyhow::Result<f64> {
    let t = args.timeout_secs.or(file).unwrap_or(DEFAULT_TIMEOUT_SECS);
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid(format!("timeout_secs must be > 0, got {t}")));
    }
    Ok(t)
}

/// Exactly one backend, taken from the command line if it names any,
/// otherwise from the config file.
pub fn backend(
    file: &FileConfig,
    args: &BackendArgs,
    t: &TimeoutArgs,
) -> anyhow::Result<BackendChoice> {
    let (scripted, remote) = if !args.scripted.is_empty() || args.remote.is_some() {
        (&args.scripted, &args.remote)
    } else {
        (&file.backend.scripted, &file.backend.remote)
    };
    match (scripted.is_empty(), remote) {
        (false, None) => Ok(BackendChoice::Scripted(scripted.clone())),
        (true, Some(url)) => Ok(BackendChoice::Remote {
            url: url.clone(),
            timeout_secs: timeout(file.backend.timeout_secs, t)?,
        }),
        (false, Some(_)) => Err(invalid(
            "select either a scripted or a remote backend, not both",
        )),
        (true, None) => Err(invalid("no backend selected: pass --scripted or --remote")),
    }
}

pub fn judge(file: &FileConfig, args: &JudgeArgs, t: &TimeoutArgs) -> anyhow::Result<JudgeChoice> {
    match args.judge_url.as_ref().or(file.judges.remote.as_ref()) {
        None => Ok(JudgeChoice::Default),
        Some(url) => Ok(JudgeChoice::Remote {
            url: url.clone(),
            timeout_secs: timeout(file.judges.timeout_secs, t)?,
        }),
    }
}

pub fn output_dir(file: &FileConfig, args: &OutputArgs) -> PathBuf {
    args.output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}
