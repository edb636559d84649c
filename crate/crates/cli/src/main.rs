//! `batik` — build and query a batik-pattern knowledge graph, and train the
//! pattern classifier that keys back into it.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use batik_core::Error;

#[derive(Parser)]
#[command(
    name = "batik",
    about = "Batik pattern knowledge graph and classifier toolkit",
    version
)]
struct Cli {
    /// RNG seed for every seeded operation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON config file; flags beat env vars beat the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Suppress human-readable output (reports still written).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full text pipeline: tokenize, embed, cluster, review,
    /// extract, normalize, deduplicate, store.
    BuildKg(commands::build_kg::Args),
    /// Evaluate one query against a stored graph.
    Query(commands::query::Args),
    /// Interactive query loop.
    Repl(commands::query::ReplArgs),
    /// Generate the synthetic five-category image set.
    GenData(commands::data::GenArgs),
    /// Assign stratified train/test splits to a manifest.
    Split(commands::data::SplitArgs),
    /// Train the classifier.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint: confusion matrix, metrics, ROC curves.
    Eval(commands::train::EvalArgs),
    /// Classify one image and look up its cultural context.
    Classify(commands::classify::Args),
    /// Export a stored graph as DOT or JSON.
    ExportGraph(commands::export::Args),
}

/// Exit codes: 0 success or empty result, 1 I/O, 2 syntax, 3 schema or
/// config, 4 numeric failure.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io { .. } | Error::Format { .. } | Error::Other(_) => 1,
        Error::Syntax { .. } => 2,
        Error::Schema(_)
        | Error::Config(_)
        | Error::UnknownEntity(_)
        | Error::UnknownToken(_)
        | Error::Shape(_) => 3,
        Error::NonFinite(_) => 4,
    }
}

pub(crate) struct Ctx {
    pub seed: u64,
    pub quiet: bool,
    pub settings: config::Settings,
}

impl Ctx {
    pub fn say(&self, text: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", text.as_ref());
        }
    }
}

fn run() -> Result<(), Error> {
    let cli = Cli::parse();
    let settings = config::Settings::load(cli.config.as_deref())?;
    let seed = settings.resolve("seed", cli.seed, 42)?;
    let ctx = Ctx {
        seed,
        quiet: cli.quiet,
        settings,
    };
    match cli.command {
        Command::BuildKg(args) => commands::build_kg::run(&ctx, args),
        Command::Query(args) => commands::query::run(&ctx, args),
        Command::Repl(args) => commands::query::repl(&ctx, args),
        Command::GenData(args) => commands::data::gen(&ctx, args),
        Command::Split(args) => commands::data::split(&ctx, args),
        Command::Train(args) => commands::train::train(&ctx, args),
        Command::Eval(args) => commands::train::eval(&ctx, args),
        Command::Classify(args) => commands::classify::run(&ctx, args),
        Command::ExportGraph(args) => commands::export::run(&ctx, args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
