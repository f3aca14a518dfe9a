use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Grounded, citation-annotated answering: indexing, training-data generation,
/// iterative inference and evaluation.
#[derive(Parser, Debug)]
#[command(name = "groundcite", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file, which
/// overrides built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalOpts {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// BM25 index directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub index: Option<PathBuf>,
    /// Passage corpus (JSONL of {id, title, text}).
    #[arg(long, global = true, value_name = "FILE")]
    pub corpus: Option<PathBuf>,
    /// Script for the scripted generator backend.
    #[arg(long, global = true, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Override table (JSONL) for the oracle entailment scorer.
    #[arg(long, global = true, value_name = "FILE")]
    pub overrides: Option<PathBuf>,
    /// Seed passed to every stochastic component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Passages per prompt.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a BM25 index from a passage corpus.
    Index {
        /// Replace an existing index.
        #[arg(long)]
        force: bool,
    },
    /// Build citation-annotated training data from unlabeled queries.
    GenData(commands::GenDataArgs),
    /// Answer queries with citations, optionally with iterative refinement.
    Infer(commands::InferArgs),
    /// Add citations to plain answers by retrieving and scoring each sentence.
    PosthocCite(commands::PosthocArgs),
    /// Score a prediction file.
    Eval(commands::EvalArgs),
    /// Print artifact, template and index format versions.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Index { force } => commands::index(&cli.global, force),
        Command::GenData(args) => commands::gen_data(&cli.global, &args),
        Command::Infer(args) => commands::infer(&cli.global, &args),
        Command::PosthocCite(args) => commands::posthoc_cite(&cli.global, &args),
        Command::Eval(args) => commands::eval(&cli.global, &args),
        Command::Version => {
            commands::version();
            Ok(commands::Status::Success)
        }
    };
    match result {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::Status::Usage.code())
        }
    }
}
