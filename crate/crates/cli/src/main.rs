//! `semcal` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semcal::decoding::{DEFAULT_ALPHA, DEFAULT_BEAM_SIZE, DEFAULT_BETA, DEFAULT_MAX_LENGTH};
use semcal::head::{DEFAULT_DROPOUT, DEFAULT_LAMBDA};
use semcal::semantic::DEFAULT_TAU;
use semcal::ErrorKind;

#[derive(Parser, Debug)]
#[command(
    name = "semcal",
    version,
    about = "Semantic confidence calibration for audio captioning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a manifest and write report.json, bins.csv, scores.csv and friends.
    Evaluate(EvaluateArgs),
    /// Fit a temperature to a logit dump and its targets.
    Calibrate(CalibrateArgs),
    /// Train the confidence head on manifest hidden states.
    TrainHead(TrainHeadArgs),
    /// Rerank manifest candidates by length-normalized likelihood and confidence.
    Rerank(RerankArgs),
    /// Run beam search and greedy decoding on a toy transition model.
    DecodeSim(DecodeSimArgs),
    /// Merge report.json files into a side-by-side table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct ScoringArgs {
    /// Length-normalization exponent.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Confidence weight in the beam score.
    #[arg(long, default_value_t = DEFAULT_BETA, allow_negative_numbers = true)]
    beta: f64,
}

#[derive(Args, Debug, Clone)]
struct ConfidenceArgs {
    /// Where candidate confidences come from.
    #[arg(long, value_enum, default_value_t = ConfidenceArg::Fixed)]
    confidence: ConfidenceArg,
    /// head.json written by `train-head` (required with `--confidence head`).
    #[arg(long)]
    head: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ConfidenceArg {
    Fixed,
    Manifest,
    Head,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SelectionArg {
    First,
    Rerank,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FamilyArg {
    Clap,
    Sbert,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// JSONL manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Embedding families to score.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [FamilyArg::Clap, FamilyArg::Sbert])]
    families: Vec<FamilyArg>,
    /// Semantic correctness threshold.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Number of equal-width calibration bins.
    #[arg(long, default_value_t = semcal::calibration::DEFAULT_BINS)]
    bins: usize,
    /// Which candidate is evaluated per example.
    #[arg(long, value_enum, default_value_t = SelectionArg::First)]
    selection: SelectionArg,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    confidence: ConfidenceArgs,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Logits tensor of shape [N, V].
    #[arg(long)]
    logits: PathBuf,
    /// Target token ids, u32 tensor of shape [N].
    #[arg(long)]
    targets: PathBuf,
    /// Output path for the fitted temperature.
    #[arg(long, default_value = "temperature.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    lower: f64,
    #[arg(long, default_value_t = 20.0)]
    upper: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    Similarity,
    Binary,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
struct TrainHeadArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for head.json, parameter tensors and training.json.
    #[arg(long)]
    out: PathBuf,
    /// Embedding family providing the semantic targets.
    #[arg(long, value_enum, default_value_t = FamilyArg::Clap)]
    family: FamilyArg,
    #[arg(long, value_enum, default_value_t = TargetArg::Similarity)]
    target: TargetArg,
    /// Threshold for `--target binary`.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    dropout: f64,
    /// Weight of the confidence loss in the reported combined loss.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, env = "SEMCAL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct RerankArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for ranked.csv and chosen.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    confidence: ConfidenceArgs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PruningArg {
    Likelihood,
    Stepwise,
}

#[derive(Args, Debug)]
struct DecodeSimArgs {
    /// Toy model JSON (transition table). Omit to sample one with `--random-vocab`.
    #[arg(long, required_unless_present = "random_vocab")]
    model: Option<PathBuf>,
    /// Sample a random toy model with this many tokens instead.
    #[arg(long, conflicts_with = "model")]
    random_vocab: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_BEAM_SIZE)]
    beam: usize,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
    max_length: usize,
    /// Fixed decoding temperature.
    #[arg(long, conflicts_with = "temperature_file")]
    temperature: Option<f64>,
    /// temperature.json written by `calibrate`.
    #[arg(long)]
    temperature_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PruningArg::Likelihood)]
    pruning: PruningArg,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "SEMCAL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// report.json files, one table column each.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Column labels; defaults to Greedy, Beam for two reports.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Directory for table.md and table.csv; the table is printed otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::TrainHead(a) => commands::train_head(a),
        Command::Rerank(a) => commands::rerank(a),
        Command::DecodeSim(a) => commands::decode_sim(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semcal: error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
