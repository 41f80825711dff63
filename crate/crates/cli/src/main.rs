//! `irvuln` command-line driver.
//!
//! Exit codes: 0 success, 1 data error, 2 usage/configuration error,
//! 3 internal invariant failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "irvuln", version, about = "Vulnerability detection on LLVM IR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSONL corpus from a JSON corpus spec.
    GenCorpus {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Strip user-defined functions, renumber locals and drop long programs.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        max_lines: Option<usize>,
    },
    /// Build the token vocabulary of a JSONL corpus.
    BuildVocab {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the checkpoint and a JSON training report.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Accuracy and confusion counts on a JSONL test set.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = irvuln::eval::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Classify one program (JSONL record or raw IR text); prints label and probability.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        program: PathBuf,
    },
    /// Classifier-head depth ablation; writes JSON and a CSV next to it.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated depths, or a range such as `1..5` (inclusive).
        #[arg(long)]
        depths: String,
        #[arg(long)]
        repeats: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against central finite differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus { spec, out } => commands::gen_corpus(&spec, &out),
        Command::Preprocess {
            input,
            out,
            max_lines,
        } => commands::preprocess(&input, &out, max_lines),
        Command::BuildVocab { input, out } => commands::build_vocab(&input, &out),
        Command::Train { config } => commands::train(&config),
        Command::Evaluate {
            checkpoint,
            test,
            out,
            threshold,
        } => commands::evaluate(&checkpoint, &test, &out, threshold),
        Command::Predict {
            checkpoint,
            program,
        } => commands::predict(&checkpoint, &program),
        Command::Ablate {
            config,
            depths,
            repeats,
            out,
        } => commands::ablate(&config, &depths, repeats, &out),
        Command::GradCheck { config } => commands::grad_check(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.kind.code())
        }
    }
}
