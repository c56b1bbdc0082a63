mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Latent plan transformer: data generation, training, evaluation and
/// self-checks.
#[derive(Parser, Debug)]
#[command(name = "lpt", version)]
struct Cli {
    /// Worker threads; 1 gives bit-identical reruns.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an offline dataset as JSONL.
    GenData(commands::GenDataArgs),
    /// Train a model (or the behaviour-cloning baseline) on a dataset.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint by planning and rolling out in an environment.
    Eval(commands::EvalArgs),
    /// Run the built-in verification suites.
    Verify(commands::VerifyArgs),
    /// Summarise training logs and evaluation reports into one JSON file.
    ExportMetrics(commands::ExportArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Verify(a) => commands::verify(a),
        Command::ExportMetrics(a) => commands::export_metrics(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for usage and validation problems, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    use lpt_core::Error;
    for cause in e.chain() {
        if cause.is::<config::UsageError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Config(_) | Error::Validation(_) | Error::Parse { .. } | Error::Shape(_) | Error::Json(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

