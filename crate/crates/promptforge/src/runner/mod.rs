//! CLI commands, configuration, and run-directory persistence.

pub mod config;
mod eval;
mod report;
mod rundir;
mod train;

pub use config::RunConfig;
pub use eval::{cmd_eval, EvalReport};
pub use report::{cmd_report, render_report};
pub use rundir::{
    eval_evidence_path, FileSink, Manifest, RunDir, EVAL_REPORT_FILE, FINAL_PROMPT_FILE,
    MANIFEST_FILE, RUN_LOG_FILE, TIMINGS_FILE, TRAINING_SET_FILE, TRAJECTORY_FILE,
    TRANSCRIPTS_FILE, USAGE_FILE,
};
pub use train::{cmd_train, TrainOutcome};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::llm::{CacheStore, HttpProvider, LlmClient, LlmError, ScriptedProvider};
use crate::optimizer::OptimizerError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run directory {0} already holds a run; pass --resume to continue it")]
    RefuseExisting(PathBuf),
    #[error("run directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("corpus {0} is empty; pass@1 is undefined")]
    EmptyCorpus(PathBuf),
    #[error("run log corrupt at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunnerError {
    /// 2 for misuse the caller can fix by editing inputs, 1 for failures
    /// at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_)
            | RunnerError::RefuseExisting(_)
            | RunnerError::EmptyCorpus(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Provider construction shared by every command: `--scripted` substitutes
/// the deterministic fixture provider for the HTTP one, and the response
/// cache attaches when `output.cache_dir` is configured.
pub fn build_client(config: &RunConfig, scripted: Option<&Path>) -> Result<LlmClient, RunnerError> {
    let provider: Arc<dyn crate::llm::ChatProvider> = match scripted {
        Some(path) => Arc::new(ScriptedProvider::from_path(path)?),
        None => Arc::new(HttpProvider::new(config.provider.clone())?),
    };
    let cache = match &config.output.cache_dir {
        Some(dir) => Some(CacheStore::open(dir)?),
        None => None,
    };
    Ok(LlmClient::new(
        provider,
        cache,
        config.provider.cache_sampling,
    ))
}

#[derive(Debug, Parser)]
#[command(
    name = "promptforge",
    version,
    about = "Execution-driven prompt optimization for LLM code tasks"
)]
pub struct Cli {
    /// Replace the HTTP provider with a scripted fixture file.
    #[arg(long, global = true, value_name = "FIXTURE")]
    pub scripted: Option<PathBuf>,

    /// Override the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the training set and optimize the initial prompt.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue a partial run from its checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a fixed prompt on a corpus (pass@1).
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Summarize a finished or partial run directory.
    Report {
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },
}

/// Dispatch a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), RunnerError> {
    match cli.command {
        Command::Train { config, resume } => {
            let config = RunConfig::from_path(&config)?;
            let outcome = cmd_train(&config, cli.scripted.as_deref(), cli.seed, resume)?;
            println!(
                "optimized over {} training tasks; stopped at k={} ({:?})",
                outcome.training_size, outcome.stopped_at, outcome.decision
            );
            println!("final prompt {}:", outcome.final_prompt.id);
            println!("{}", outcome.final_prompt.text);
            Ok(())
        }
        Command::Eval {
            config,
            prompt,
            corpus,
        } => {
            let config = RunConfig::from_path(&config)?;
            let report = cmd_eval(&config, cli.scripted.as_deref(), &prompt, &corpus)?;
            println!(
                "pass@1 = {}/{} = {}",
                report.pass_at_1.numerator, report.pass_at_1.denominator, report.pass_at_1.decimal
            );
            if report.errors > 0 {
                println!("{} task(s) hit provider/sandbox errors", report.errors);
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            let summary = cmd_report(&run_dir)?;
            print!("{summary}");
            Ok(())
        }
    }
}
