mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use listenthink::scenario_io::{InterruptPlan, Task};

use commands::{EXIT_INVALID, EXIT_RUNTIME};
use config::{
    BackendArgs, ConfigArgs, FileConfig, JudgeArgs, OutputArgs, SessionArgs, TimeoutArgs,
};

/// Bad input or configuration; exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Simulates think-while-listening sessions and scores them.
#[derive(Debug, Parser)]
#[command(name = "listenthink", version)]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run scenarios and write one `<id>.trace.jsonl` per scenario.
    Simulate(SimulateArgs),
    /// Build a training corpus from train_input records or traces.
    AssembleTrain {
        /// train_input files, trace files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Compute interruption and tool-use metrics from traces.
    Score(ScoreArgs),
    /// Print the tables of saved reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Check files of any kind, printing `file:line: message` per problem.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write synthetic scenarios with matching scripts.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario files or directories of `*.scenario.jsonl`.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    timeout: TimeoutArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Scenario files or directories.
    #[arg(long, required = true)]
    scenarios: Vec<PathBuf>,
    /// Trace files or directories of `*.trace.jsonl`.
    #[arg(long, required = true)]
    traces: Vec<PathBuf>,
    /// Labels overriding those stored in the scenarios.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Where to write the report JSON.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    judge: JudgeArgs,
    #[command(flatten)]
    timeout: TimeoutArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// interrupt or tool-call.
    #[arg(long, value_parser = commands::parse_task)]
    task: Task,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seed of the first case; case i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_words: Option<usize>,
    /// Turn length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    n_calls: Option<usize>,
    /// Calls the script gets wrong.
    #[arg(long)]
    n_failed: Option<usize>,
    /// random, never or the chunk index to interrupt in.
    #[arg(long, value_parser = commands::parse_plan)]
    interrupt: Option<InterruptPlan>,
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let file = FileConfig::load(cli.config.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => {
            let opts = commands::simulate_options(&file, &a)?;
            commands::simulate(&a.scenarios, &opts)
        }
        Command::AssembleTrain { inputs, output } => commands::assemble_train(&inputs, &output),
        Command::Score(a) => commands::score(&commands::ScoreInputs {
            scenarios: &a.scenarios,
            traces: &a.traces,
            labels: a.labels.as_deref(),
            judge: config::judge(&file, &a.judge, &a.timeout)?,
            output: a.output.as_deref(),
        }),
        Command::Report { reports } => commands::report(&reports),
        Command::Validate { files } => commands::validate(&files),
        Command::Generate(a) => {
            let mode = config::mode(&file, &a.session);
            let session = config::session(&file, &a.session)?;
            commands::generate(&commands::GenerateOptions {
                params: commands::params(a.task, mode, &session, &a),
                count: a.count,
                seed: a.seed.or(file.seed).unwrap_or(0),
                output_dir: config::output_dir(&file, &a.output),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(EXIT_INVALID)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
