use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod cmd;
mod common;

#[derive(Parser)]
#[command(name = "signalcast", version, about = "Nowcasting, mood and network analyses over geolocated posts")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, ground truth and support manifest.
    Synth(cmd::synth::SynthArgs),
    /// Build a candidate n-gram vocabulary.
    Features(cmd::features::FeaturesArgs),
    /// Score a vocabulary over a binned corpus.
    ScoreMatrix(cmd::features::ScoreMatrixArgs),
    /// Train a nowcasting model.
    Train(cmd::train::TrainArgs),
    /// Apply a trained model.
    Infer(cmd::infer::InferArgs),
    /// Score a trained model, or cross-validate a learner.
    Evaluate(cmd::infer::EvaluateArgs),
    /// Lexicon mood series, circadian patterns and their tests.
    Mood(cmd::mood::MoodArgs),
    /// Content-similarity network between locations.
    Network(cmd::network::NetworkArgs),
    /// Hourly posting-volume pattern.
    Posting(cmd::network::PostingArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Synth(a) => cmd::synth::run(c, a),
        Command::Features(a) => cmd::features::run_features(c, a),
        Command::ScoreMatrix(a) => cmd::features::run_score_matrix(c, a),
        Command::Train(a) => cmd::train::run(c, a),
        Command::Infer(a) => cmd::infer::run_infer(c, a),
        Command::Evaluate(a) => cmd::infer::run_evaluate(c, a),
        Command::Mood(a) => cmd::mood::run(c, a),
        Command::Network(a) => cmd::network::run_network(c, a),
        Command::Posting(a) => cmd::network::run_posting(c, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
