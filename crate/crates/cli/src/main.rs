mod config;
mod inspect;
mod run;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featforge::eval::ModelKind;
use featforge::search::{AgentKind, RouterMode};

/// Failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn internal(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    pub fn config(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl ToString) -> Self {
        Self {
            code: 3,
            message: message.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "featforge",
    version,
    about = "Router-gated feature generation and selection",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for an augmented feature set on a CSV dataset.
    Run(RunArgs),
    /// Train a router policy offline from search traces.
    TrainRouter(TrainArgs),
    /// Summarize a search trace.
    #[command(alias = "inspect-trace")]
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskArg {
    Class,
    Regr,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Target column name or 0-based index.
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub router: Option<RouterMode>,
    #[arg(long)]
    pub agents: Option<AgentKind>,
    /// Trained router policy file.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Trace of an earlier run whose records join the long-term memory.
    #[arg(long)]
    pub preload: Option<PathBuf>,
    #[arg(long)]
    pub no_long_memory: bool,
    #[arg(long)]
    pub no_short_memory: bool,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    #[arg(long, default_value = "featforge-out")]
    pub out: PathBuf,
    /// TOML file with [search], [eval] and [llm] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Trace files or directories of `*.jsonl` traces.
    #[arg(long, required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail unless the policy agrees with at least 90% of the logged advantages.
    #[arg(long)]
    pub self_test: bool,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub trace: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run::cmd_run(&args),
        Command::TrainRouter(args) => train::cmd_train_router(&args),
        Command::Inspect(args) => inspect::cmd_inspect(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
