//! `sas`: corpus generation, vocabulary building, pre-training, probing,
//! FLOPs tables and augmentation inspection.

mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sas_core::strategy::Strategy;

#[derive(Parser)]
#[command(name = "sas", version, about = "Self-augmented single-network pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus from a Markov oracle (a new random one or a saved one).
    GenCorpus(GenCorpusArgs),
    /// Build a vocabulary file from one or more corpora.
    BuildVocab(BuildVocabArgs),
    /// Pre-train a model from a run config.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint and append one CSV row.
    Probe(ProbeArgs),
    /// Print the FLOPs comparison table.
    Flops(FlopsArgs),
    /// Dump the stored replacements of one instance.
    InspectAug(InspectAugArgs),
    /// Train and evaluate the ablation ladder under one step budget.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output corpus, one document per line.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_seqs: usize,
    /// Words per document.
    #[arg(long)]
    seq_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample from this saved oracle instead of creating one.
    #[arg(long, conflicts_with_all = ["states", "concentration", "oracle_seed"])]
    oracle_in: Option<PathBuf>,
    /// Where to save a newly created oracle.
    #[arg(long)]
    oracle_out: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    /// Dirichlet concentration of the random transition rows.
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long)]
    oracle_seed: Option<u64>,
}

#[derive(Args)]
struct BuildVocabArgs {
    #[arg(long = "corpus", required = true)]
    corpora: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Maximum size including special tokens.
    #[arg(long, default_value_t = 30_000)]
    max_size: usize,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override `train.strategy`.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override `train.epochs`.
    #[arg(long)]
    epochs: Option<u32>,
    /// Override `run.out_dir` (the environment override still wins).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from a checkpoint in the run directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run config supplying the vocabulary, heldout corpus, oracle and probe data.
    #[arg(long)]
    config: PathBuf,
    /// CSV file the row is appended to; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    /// Also price the model of this run config.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InspectAugArgs {
    /// Run directory holding `cache-e<epoch>.bin`.
    #[arg(long, conflicts_with = "cache")]
    run: Option<PathBuf>,
    /// Explicit cache spill file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Epoch in which the replacements were produced.
    #[arg(long)]
    epoch: u32,
    #[arg(long)]
    instance: u64,
    /// Vocabulary for printing token strings.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    /// Base run config; its strategy is ignored.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving one run directory per strategy and `ablation.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated strategies (default: the six single-network rungs).
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<Strategy>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::BuildVocab(a) => commands::build_vocab(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Probe(a) => commands::probe(a),
        Command::Flops(a) => commands::flops(a),
        Command::InspectAug(a) => commands::inspect_aug(a),
        Command::Ablation(a) => commands::ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
