mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptgen_core::dataset::{Split, DEFAULT_RESPLIT_SEED};
use conceptgen_core::ranker::Ntc;
use conceptgen_core::sigtest;

/// Exit status when a stage finished but some items failed.
pub const EXIT_WARNINGS: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "conceptgen", version, about = "Caption-grounded concept-to-text pipeline")]
struct Cli {
    /// Worker threads for parallel stages. Outputs do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate dataset files, write one file per split and re-split dev_o
    /// into dev_cg and test_cg.
    Split(SplitArgs),
    /// Search, download and validate images for each concept set.
    Retrieve(RetrieveArgs),
    /// Caption validated images through a provider.
    Caption(CaptionArgs),
    /// Reorder each concept set's captions by descending coverage.
    Rank(RankArgs),
    /// Emit the augmented source/target file for one NTC.
    Augment(AugmentArgs),
    /// Score a generations file against references.
    Evaluate(EvaluateArgs),
    /// Paired significance test between two systems.
    Sigtest(SigtestArgs),
    /// NTC sweep tables and NTC selection.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Dataset file(s): one JSON object per line with id, concepts,
    /// references and split.
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    /// Keep only records of this split.
    #[arg(long)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long = "dataset", required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESPLIT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct NetArgs {
    /// Offline mode: read everything from this fixture directory. No
    /// network access is made.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Retries after a transient failure.
    #[arg(long, default_value_t = 2)]
    retries: u32,
    #[arg(long, default_value_t = 500)]
    retry_base_ms: u64,
    #[arg(long, default_value_t = 10)]
    timeout_secs: u64,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    net: NetArgs,
    /// Results page template containing `{query}`. Required unless
    /// --fixtures is given.
    #[arg(long)]
    search_url: Option<String>,
    /// URLs kept per concept set.
    #[arg(long, default_value_t = conceptgen_core::retrieval::DEFAULT_URL_LIMIT)]
    limit: usize,
    /// Store validated images under this directory.
    #[arg(long)]
    images_dir: Option<PathBuf>,
    #[arg(long, default_value_t = conceptgen_core::retrieval::DEFAULT_MAX_IMAGE_BYTES)]
    max_image_bytes: u64,
    /// Image manifest to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CaptionArgs {
    /// Image manifest from `retrieve`.
    #[arg(long)]
    images: PathBuf,
    #[command(flatten)]
    net: NetArgs,
    /// Caption manifest to answer from instead of a remote endpoint.
    #[arg(long, conflicts_with = "fixtures")]
    manifest: Option<PathBuf>,
    /// Remote endpoint; falls back to the CONCEPTGEN_CAPTION_ENDPOINT
    /// environment variable.
    #[arg(long, conflicts_with_all = ["fixtures", "manifest"])]
    endpoint: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Caption manifest.
    #[arg(long)]
    captions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmitModeArg {
    Train,
    Inference,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Ranked-caption manifest from `rank`.
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    ntc: Ntc,
    /// Defaults to train when every selected record is training data,
    /// inference otherwise.
    #[arg(long, value_enum)]
    mode: Option<EmitModeArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Generations file: one JSON object per line with id and output.
    #[arg(long)]
    system: PathBuf,
    /// System name in reports; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
    /// Dataset file(s) with references.
    #[arg(long = "refs", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    /// Externally computed per-example scores, as NAME=FILE with lines
    /// {"id": ..., "score": ...}. NAME is one of spice, meteor, bertscore,
    /// ppl.
    #[arg(long = "external", value_parser = parse_key_path)]
    external: Vec<(String, PathBuf)>,
    /// JSON report with corpus and per-example scores.
    #[arg(long)]
    out: PathBuf,
    /// Corpus table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Exact when n is small enough, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args)]
struct SigtestArgs {
    /// Generations file of system A.
    #[arg(long)]
    a: PathBuf,
    /// Generations file of system B.
    #[arg(long)]
    b: PathBuf,
    #[arg(long = "refs", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long)]
    split: Option<Split>,
    #[arg(long, default_value_t = sigtest::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    #[arg(long, default_value_t = sigtest::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = sigtest::DEFAULT_SEED)]
    seed: u64,
    /// Test corpus BLEU by approximate randomization instead of sentence
    /// BLEU permutations.
    #[arg(long)]
    corpus_bleu: bool,
    /// Significance table as CSV.
    #[arg(long)]
    out: PathBuf,
    /// Formatted text table; also printed to stdout.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SweepCommand {
    /// Average coverage by the top NTC captions, per NTC.
    Coverage(SweepCoverageArgs),
    /// Pick the NTC with the best seed-averaged dev score.
    Select(SweepSelectArgs),
}

#[derive(Debug, Args)]
struct SweepCoverageArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    ranked: PathBuf,
    /// Ascending NTC values.
    #[arg(long, value_delimiter = ',', default_values_t = conceptgen_core::ranker::NTC_GRID.map(|n| Ntc::new(n).expect("grid is positive")))]
    ntc: Vec<Ntc>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepSelectArgs {
    /// Dev report from `evaluate`, as NTC=FILE. Repeat per NTC and seed.
    #[arg(long = "report", required = true, value_parser = parse_key_path)]
    reports: Vec<(String, PathBuf)>,
    #[arg(long, default_value = conceptgen_core::sweep::SELECTION_METRIC)]
    metric: String,
    /// Per-NTC table of seed means and standard deviations.
    #[arg(long)]
    out: PathBuf,
}

fn parse_key_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), PathBuf::from(v))),
        _ => Err(format!("expected KEY=PATH, got {s:?}")),
    }
}

/// How a command that did not fail outright ended.
pub enum Outcome {
    Ok,
    Warnings(usize),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.into()).build_global() {
            eprintln!("error: configuring workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Split(a) => commands::split(a),
        Command::Retrieve(a) => commands::retrieve(a),
        Command::Caption(a) => commands::caption(a),
        Command::Rank(a) => commands::rank(a),
        Command::Augment(a) => commands::augment(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Sigtest(a) => commands::sigtest(a),
        Command::Sweep(SweepCommand::Coverage(a)) => commands::sweep_coverage(a),
        Command::Sweep(SweepCommand::Select(a)) => commands::sweep_select(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Warnings(n)) => {
            eprintln!("completed with warnings: {n} failures, see the failure report");
            ExitCode::from(EXIT_WARNINGS)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
