//! `persuasion`: fit, evaluate and simulate persuasion MDPs from session data.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 non-convergence.

mod args;
mod evaluate;
mod fit;
mod output;
mod simulate;
mod synth;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{EvaluateArgs, FitArgs, SimulateArgs, SynthArgs, ValidateArgs};

#[derive(Parser)]
#[command(name = "persuasion", version, about = "Tabular RL pipeline for persuasive coaching data")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and summarize a corpus.
    Validate(ValidateArgs),
    /// Select state features, estimate the model and solve it.
    Fit(FitArgs),
    /// Leave-one-person-out comparisons of predictors.
    Evaluate(EvaluateArgs),
    /// Propagate populations under the fitted policies.
    Simulate(SimulateArgs),
    /// Generate a ground-truth model and a synthetic corpus.
    Synth(SynthArgs),
}

/// A problem with the invocation rather than the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<persuasion::Error>() {
            return match e {
                persuasion::Error::NoConvergence { .. } => 3,
                persuasion::Error::InvalidConfig(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let result = match &cli.command {
        Command::Validate(a) => validate::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
