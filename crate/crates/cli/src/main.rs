//! `newsrl`: ingest market data and news, score headlines, tune and
//! evaluate trading agents, and write reports.

mod commands;
mod config;
mod runlog;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "newsrl", version, about = "News-aware reinforcement-learning trading toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for all artifacts (overrides `paths.work_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    pub work_dir: Option<PathBuf>,
    /// Worker threads for parallel evaluation; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Log filter for stderr, e.g. `info` or `newsrl=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a `ts,open,high,low,close,volume` CSV and store it sorted.
    IngestBars {
        /// Input CSV (overrides `paths.bars`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Validate a news JSONL file (`ts`, `title`, `body`) and store it.
    IngestNews {
        /// Input JSONL (overrides `paths.news`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score stored news for sentiment and risk, reusing cached scores.
    ScoreNews {
        /// Answer prompts from recorded responses instead of the endpoint.
        #[arg(long)]
        offline: bool,
        /// Recorded responses (overrides `paths.fixture`).
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Forward-fill scores onto bars and write the aligned dataset.
    Align {
        /// Model whose cached scores to use; inferred when the cache holds
        /// a single model.
        #[arg(long)]
        model: Option<String>,
    },
    /// Search hyperparameters for one configuration.
    Tune {
        #[command(flatten)]
        study: StudyArgs,
        /// Number of trials (overrides `tuner.trials`).
        #[arg(long)]
        trials: Option<usize>,
        /// Append to an existing trial store instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Train a single agent with fixed or sampled hyperparameters.
    Train {
        #[command(flatten)]
        study: StudyArgs,
        /// JSON object of hyperparameters; sampled from the search space
        /// when omitted.
        #[arg(long, value_name = "FILE")]
        params: Option<PathBuf>,
    },
    /// Average return over sampled test-split periods for a checkpoint.
    Evaluate {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Run a checkpoint over the whole test split and write its curve.
    Backtest {
        /// Agent checkpoint JSON.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate every tuned configuration and write tables, curves and plot.
    Report {
        #[command(flatten)]
        eval: ReportArgs,
    },
    /// Run the whole pipeline on the bundled synthetic fixtures.
    Selftest {
        /// Seed for tuning (overrides `tuner.seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Trials per configuration.
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Use the desk-scale budget instead of the quick smoke budget.
        #[arg(long)]
        desk_scale: bool,
        /// Only the MLP configurations of both algorithms.
        #[arg(long)]
        mlp_only: bool,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Ddqn,
    Grpo,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum NetArg {
    Mlp,
    Lstm,
    Transformer,
}

#[derive(Args, Debug, Clone)]
pub struct StudyArgs {
    /// Agent algorithm (overrides `tuner.algo`).
    #[arg(long, value_enum)]
    pub algo: Option<AlgoArg>,
    /// Backbone network (overrides `tuner.net`).
    #[arg(long, value_enum)]
    pub net: Option<NetArg>,
    /// Seed (overrides `tuner.seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shrink the training and validation budget about 20x.
    #[arg(long)]
    pub desk_scale: bool,
    /// Zero the sentiment and risk channels.
    #[arg(long)]
    pub no_llm: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Agent checkpoint JSON.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ProtocolArgs {
    /// Number of sampled periods (overrides `eval.periods`).
    #[arg(long)]
    pub periods: Option<usize>,
    /// Period length in minutes (overrides `eval.length`).
    #[arg(long)]
    pub length: Option<usize>,
    /// Window sampling seed (overrides `eval.seed`).
    #[arg(long)]
    pub eval_seed: Option<u64>,
    /// Use desk-scale protocol defaults.
    #[arg(long)]
    pub desk_scale: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] newsrl::pipeline::PipelineError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Data(_) => 2,
            CliError::Pipeline(e) if e.is_input_error() => 2,
            CliError::Pipeline(_) | CliError::Runtime(_) => 3,
        }
    }
}

fn init_logging(filter: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(filter)
        .parse_env("NEWSRL_LOG")
        .format(|buf, r| {
            writeln!(
                buf,
                "level={} target={} msg={:?}",
                r.level(),
                r.target(),
                r.args().to_string()
            )
        })
        .try_init();
}

fn resolve_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = &g.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.global.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.global.jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("worker pool: {e}")))?;
    }
    let cfg = resolve_config(&cli.global)?;
    commands::dispatch(cli.command, cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    init_logging(&cli.global.log);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
