//! `radar`: command-line front end for the review funnel.
//!
//! Exit codes: 0 success, 1 internal error, 2 invalid input.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "radar", version, about = "Risk-gated diff auto-review and landing")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Flags accepted by every command.
#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Overrides the scenario seed (simulate, sweep); accepted and unused elsewhere.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Policy file (TOML, or JSON). Defaults apply when absent.
    #[arg(long, global = true)]
    pub policy: Option<PathBuf>,
    /// Output directory; commands print to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate diffs (and lifecycle events) and write them normalized.
    Ingest(IngestArgs),
    /// Run diffs through the funnel and write one decision per diff.
    Evaluate(EvaluateArgs),
    /// Simulate a synthetic diff stream end to end.
    Simulate(SimulateArgs),
    /// Simulate one stream under several DRS thresholds.
    Sweep(SweepArgs),
    /// Replay an event log and print metrics.
    Report(ReportArgs),
    /// Fisher exact test and risk-score recall.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Pause RADAR for a runbook, source kind or org.
    Pause(PauseArgs),
    /// Undo a pause.
    Resume(PauseArgs),
    /// Check policy and scenario files.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub diffs: PathBuf,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Append lifecycle events to this event log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Append runbook outcomes to this ledger file.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub diffs: PathBuf,
    /// Runbook ledger (JSONL). Runbooks without history are blocked.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Raw scores (JSONL of {"raw_score": x}) seeding the calibration window.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Evaluation time, Unix seconds. Defaults to each diff's created_at.
    #[arg(long)]
    pub now: Option<i64>,
    /// Pause control file.
    #[arg(long, default_value = commands::DEFAULT_CONTROL)]
    pub control: PathBuf,
    /// Append decision events to this event log.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario: default, backlog, activation, congested.
    #[arg(long)]
    pub preset: Option<String>,
    /// Overrides the scenario's diff count.
    #[arg(long)]
    pub n_diffs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated thresholds, e.g. `P25,P50` or `25,50`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub thresholds: Vec<String>,
    /// Run thresholds one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    L7,
    All,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Event log to replay.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, value_enum, default_value_t = WindowArg::L7)]
    pub window: WindowArg,
    /// End of the L7 window, Unix seconds. Defaults to the latest publish time.
    #[arg(long)]
    pub anchor: Option<i64>,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Two-sided Fisher exact test on [[A, B], [C, D]].
    Fisher { a: u64, b: u64, c: u64, d: u64 },
    /// Incident recall when the riskiest fraction of a labeled corpus is flagged.
    Recall {
        /// JSONL of {"raw_score": x, "caused_incident": bool}.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        flag_rate: f64,
    },
}

#[derive(Debug, Args)]
pub struct PauseArgs {
    #[arg(long)]
    pub runbook: Vec<String>,
    /// Source kind: human, deterministic_codemod, ai_codemod, racer_runbook.
    #[arg(long)]
    pub kind: Vec<String>,
    #[arg(long)]
    pub org: Vec<String>,
    #[arg(long, default_value = commands::DEFAULT_CONTROL)]
    pub control: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

/// How a command failed.
#[derive(Debug)]
pub enum CliError {
    /// Bad input files or arguments. Exit 2.
    Input(String),
    /// Anything else. Exit 1.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let g = &cli.global;
    let result = match &cli.command {
        Command::Ingest(a) => commands::ingest(g, a),
        Command::Evaluate(a) => commands::evaluate(g, a),
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Sweep(a) => commands::sweep(g, a),
        Command::Report(a) => commands::report(g, a),
        Command::Stats(s) => commands::stats(g, s),
        Command::Pause(a) => commands::pause(g, a, true),
        Command::Resume(a) => commands::pause(g, a, false),
        Command::ValidateConfig(a) => commands::validate_config(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Input(m) => eprintln!("error: {m}"),
                CliError::Internal(m) => eprintln!("internal error: {m}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
