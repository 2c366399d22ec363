//! Command-line interface for graph-attention instance selection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchmarkArgs, CrosscheckArgs, EvaluateArgs, GenerateArgs, SelectArgs, TuneArgs};
use config::FileConfig;
use gais::ErrorCategory;

/// Graph-attention instance selection toolkit.
#[derive(Parser, Debug)]
#[command(name = "gais", version, about)]
struct Cli {
    /// JSON file supplying defaults for any option; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark dataset as CSV.
    Generate(GenerateArgs),
    /// Select instances and write the kept rows plus a JSON report.
    Select(SelectArgs),
    /// Score a classifier trained on one CSV against another.
    Evaluate(EvaluateArgs),
    /// Compare selection methods across seeds and write a results table.
    Benchmark(BenchmarkArgs),
    /// Search hyperparameters with Bayesian optimization.
    Tune(TuneArgs),
    /// Recompute the bundled published results and flag inconsistent rows.
    Crosscheck(CrosscheckArgs),
}

fn run(cli: &Cli) -> gais::Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(args) => commands::generate(args, &cfg),
        Command::Select(args) => commands::select(args, &cfg),
        Command::Evaluate(args) => commands::evaluate(args, &cfg),
        Command::Benchmark(args) => commands::benchmark(args, &cfg),
        Command::Tune(args) => commands::tune(args, &cfg),
        Command::Crosscheck(args) => commands::crosscheck(args, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests land here too; only real parse
            // failures are usage errors.
            let code = u8::from(err.use_stderr());
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.category() {
                ErrorCategory::Usage => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Numerical => 3,
            })
        }
    }
}
