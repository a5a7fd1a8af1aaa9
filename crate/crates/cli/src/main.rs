//! `aim`: from raw discussion threads to trained models and evaluation reports.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use aim_core::{Error, Execution};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(
    name = "aim",
    version,
    about = "Predict view changes in persuasion discussions",
    propagate_version = true
)]
struct Cli {
    /// TOML file with one table per subcommand, e.g. `[train]`. Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run everything on the calling thread (results are identical).
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter threads, linearize them and label (OH post, comment) pairs.
    Preprocess(PreprocessArgs),
    /// Fit LDA over discussions and assign each one a topic.
    Topics(TopicsArgs),
    /// Split discussions into train, validation and test sets by topic.
    Split(SplitArgs),
    /// Fit the vocabulary and TFIDF vectorizer and check the embeddings.
    Features(FeaturesArgs),
    /// Train the attentive interaction model.
    Train(TrainArgs),
    /// Train the logistic regression baseline.
    Baseline(BaselineArgs),
    /// Compare models by AUC with DeLong tests against a reference.
    Eval(EvalArgs),
    /// Attention alignment, interaction/topic correlation and top pairs.
    Analyze(AnalyzeArgs),
    /// Export attention weights and interaction tensors of a trained model.
    InspectAttention(InspectArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<config::Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) => 1,
                Error::Shape(_) | Error::Domain(_) | Error::Tape(_) | Error::Degenerate(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref().map(config::load_file).transpose()?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let ctx = Context {
        file: file.as_ref(),
        exec,
    };
    match cli.command {
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::Topics(a) => topics(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Features(a) => features(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Baseline(a) => baseline(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::InspectAttention(a) => inspect_attention(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
