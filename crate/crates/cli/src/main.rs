mod commands;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CompareArgs, EvalArgs, GradcheckArgs, MakeDatasetArgs, TrainArgs, TranslateArgs};

/// Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
/// configuration error.
#[derive(Parser)]
#[command(name = "relgan", version, about = "Train and evaluate four-generator consistency GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-domain dataset.
    MakeDataset(MakeDatasetArgs),
    /// Train a model (or the CycleGAN baseline).
    Train(TrainArgs),
    /// Translate a directory of PNGs with a checkpoint.
    Translate(TranslateArgs),
    /// Score a checkpoint against a dataset with ground truth and masks.
    Eval(EvalArgs),
    /// Finite-difference check of the loss gradients.
    Gradcheck(GradcheckArgs),
    /// Compare two finished runs.
    Compare(CompareArgs),
}

fn init_threads() {
    if let Some(n) = std::env::var("RELGAN_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
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
    init_threads();
    let result = match cli.command {
        Command::MakeDataset(a) => commands::make_dataset(a),
        Command::Train(a) => commands::train(a),
        Command::Translate(a) => commands::translate(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
