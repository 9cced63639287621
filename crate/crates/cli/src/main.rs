//! `memscope` command-line front end.
//!
//! Exit status: 0 on success, 2 for configuration errors (the message names
//! the flag), 1 for data errors (the message names the file and the line or
//! byte offset).

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memscope::scoring::{MemorizationBinning, ScoreFilter};
use memscope::trace::ContinuationSource;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

pub type Outcome = Result<(), Failure>;

#[derive(Debug, Parser)]
#[command(name = "memscope", version, about = "Memorization analysis over generation traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
}

#[derive(Debug, Args, Clone)]
pub struct TraceArgs {
    /// Trace files (JSON Lines).
    #[arg(long, num_args = 1.., required = true)]
    pub traces: Vec<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct BinArgs {
    /// Score bin width: 0.1 or 0.2.
    #[arg(long, default_value = "0.2", value_parser = parse_binning)]
    pub bin_width: MemorizationBinning,
}

fn parse_binning(s: &str) -> Result<MemorizationBinning, String> {
    s.parse().map_err(|_| format!("expected 0.1 or 0.2, got {s:?}"))
}

fn parse_filter(s: &str) -> Result<ScoreFilter, String> {
    s.parse()
        .map_err(|_| format!("expected any, full, zero, half, quarter or ge:X, got {s:?}"))
}

fn parse_order(s: &str) -> Result<usize, String> {
    match s {
        "1" => Ok(1),
        "2" => Ok(2),
        "3" => Ok(3),
        _ => Err(format!("expected 1, 2 or 3, got {s:?}")),
    }
}

fn parse_source(s: &str) -> Result<ContinuationSource, String> {
    match s {
        "true" => Ok(ContinuationSource::True),
        "generated" => Ok(ContinuationSource::Generated),
        _ => Err(format!("expected true or generated, got {s:?}")),
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-trace scores, score histogram and per-condition counts.
    Score {
        #[command(flatten)]
        traces: TraceArgs,
        #[command(flatten)]
        bins: BinArgs,
        /// Which traces `counts.csv` counts.
        #[arg(long, default_value = "full", value_parser = parse_filter)]
        filter: ScoreFilter,
    },
    /// Bin-to-bin transition matrix between two models over the same sequences.
    Transition {
        /// Exactly two trace files: smaller model first.
        #[arg(long, num_args = 2, required = true)]
        traces: Vec<PathBuf>,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Counts of selected traces across equal corpus-index ranges.
    PositionHist {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long, default_value = "50", value_parser = parse_positive)]
        parts: usize,
        #[arg(long, default_value = "full", value_parser = parse_filter)]
        filter: ScoreFilter,
        /// Largest corpus index; defaults to the largest observed.
        #[arg(long)]
        max_index: Option<u64>,
    },
    /// Counts n-grams of a corpus into a snapshot file.
    NgramCount {
        #[arg(long, required = true)]
        corpus: PathBuf,
        #[arg(long, required = true, value_parser = parse_order)]
        order: usize,
        /// Spill sorted runs to disk after this many distinct grams.
        #[arg(long, value_parser = parse_positive)]
        spill_budget: Option<usize>,
    },
    /// Mean n-gram frequency at each sequence index, per cohort.
    NgramProfile {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long, required = true)]
        counter: PathBuf,
        /// Continuation to look up: true or generated.
        #[arg(long, default_value = "true", value_parser = parse_source)]
        source: ContinuationSource,
    },
    /// Context, continuation and boundary frequencies, per cohort.
    GramStats {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long, required = true)]
        counter: PathBuf,
    },
    /// Mean entropy at each step, per cohort.
    EntropyProfile {
        #[command(flatten)]
        traces: TraceArgs,
        /// Prefix profiles with context entropies.
        #[arg(long)]
        with_context: bool,
    },
    /// Centroid similarity and 2-D projection of step embeddings.
    EmbedGeometry {
        #[arg(long, required = true)]
        traces: PathBuf,
    },
    /// Fits the trie model on a corpus.
    ToyFit {
        #[arg(long, required = true)]
        corpus: PathBuf,
        #[arg(long, default_value = "8")]
        max_order: usize,
        #[arg(long, default_value = "16", value_parser = parse_positive)]
        embedding_dim: usize,
    },
    /// Prompts the trie model with corpus documents and writes traces.
    ToyTrace {
        #[arg(long, required = true)]
        model: PathBuf,
        /// Corpus whose documents are prompted.
        #[arg(long, required = true)]
        corpus: PathBuf,
        #[arg(long, default_value = "32", value_parser = parse_positive)]
        context_len: usize,
        #[arg(long, default_value = "16", value_parser = parse_positive)]
        continuation_len: usize,
        #[arg(long, default_value = "toy")]
        label: String,
    },
    /// Trains the per-token predictor on a seeded 90/10 split.
    PredictTrain {
        #[command(flatten)]
        traces: TraceArgs,
        /// Unigram snapshot for the frequency feature.
        #[arg(long, required = true)]
        counter: PathBuf,
        #[arg(long, default_value = "20")]
        epochs: usize,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Evaluates a trained predictor on every trace file.
    PredictEval {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long, required = true)]
        counter: PathBuf,
        #[arg(long, required = true)]
        model: PathBuf,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Compares analytic and finite-difference predictor gradients.
    GradCheck {
        /// Adam steps between the two checks.
        #[arg(long, default_value = "10")]
        steps: usize,
        #[arg(long, default_value = "64", value_parser = parse_positive)]
        samples: usize,
    },
    /// Runs every analysis the inputs allow into one directory.
    Report {
        #[command(flatten)]
        traces: TraceArgs,
        #[arg(long)]
        counter: Option<PathBuf>,
        /// Trained predictor; needs an order-1 counter.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        bins: BinArgs,
        #[arg(long, default_value = "50", value_parser = parse_positive)]
        parts: usize,
    },
}

fn run(cli: Cli) -> Outcome {
    let ctx = commands::Ctx::new(cli.out, cli.seed)?;
    match cli.command {
        Command::Score { traces, bins, filter } => commands::score(&ctx, &traces.traces, bins.bin_width, filter),
        Command::Transition { traces, bins } => commands::transition(&ctx, &traces[0], &traces[1], bins.bin_width),
        Command::PositionHist {
            traces,
            parts,
            filter,
            max_index,
        } => commands::position_hist(&ctx, &traces.traces, parts, filter, max_index),
        Command::NgramCount {
            corpus,
            order,
            spill_budget,
        } => commands::ngram_count(&ctx, &corpus, order, spill_budget),
        Command::NgramProfile { traces, counter, source } => {
            commands::ngram_profile(&ctx, &traces.traces, &counter, source)
        }
        Command::GramStats { traces, counter } => commands::gram_stats(&ctx, &traces.traces, &counter),
        Command::EntropyProfile { traces, with_context } => {
            commands::entropy_profile(&ctx, &traces.traces, with_context)
        }
        Command::EmbedGeometry { traces } => commands::embed_geometry(&ctx, &traces),
        Command::ToyFit {
            corpus,
            max_order,
            embedding_dim,
        } => commands::toy_fit(&ctx, &corpus, max_order, embedding_dim),
        Command::ToyTrace {
            model,
            corpus,
            context_len,
            continuation_len,
            label,
        } => commands::toy_trace(&ctx, &model, &corpus, context_len, continuation_len, &label),
        Command::PredictTrain {
            traces,
            counter,
            epochs,
            bins,
        } => commands::predict_train(&ctx, &traces.traces, &counter, epochs, bins.bin_width),
        Command::PredictEval {
            traces,
            counter,
            model,
            bins,
        } => commands::predict_eval(&ctx, &traces.traces, &counter, &model, bins.bin_width),
        Command::GradCheck { steps, samples } => commands::grad_check(&ctx, steps, samples),
        Command::Report {
            traces,
            counter,
            model,
            bins,
            parts,
        } => commands::report(
            &ctx,
            &traces.traces,
            counter.as_deref(),
            model.as_deref(),
            bins.bin_width,
            parts,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
