//! Command-line surface for convex polytopic corpus models.
//!
//! `fit` runs the full pipeline (corpus → subspace → simplex) and persists a
//! model artifact; the remaining subcommands read that artifact back and emit
//! interpretability tables as JSON or CSV. Every command is deterministic
//! given its flags and seeds.
//!
//! Exit codes: 0 on success, 1 on I/O failures, 2 on validation or numeric
//! errors. Fatal errors print one machine-readable JSON line on standard
//! error: `{"error":{"kind":"…","message":"…"}}`.

mod commands;
mod embed;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpm_core::CpmError;

#[derive(Parser)]
#[command(
    name = "cpm",
    version,
    about = "Fit and inspect convex polytopic corpus models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a corpus file and write the artifact to disk.
    ///
    /// Prints a one-line JSON fit summary (volume, iterations, max
    /// enclosure violation) to standard output.
    Fit(FitArgs),
    /// Print the highest-weight words of one vertex, or of every vertex.
    Topwords(TopwordsArgs),
    /// Print the corpus utterances closest to a vertex in the reduced space.
    Nearest(NearestArgs),
    /// Print the composition coefficients of a text as a JSON vector.
    Coeffs(CoeffsArgs),
    /// Print the token similarity matrices (raw cosine and row-softmaxed)
    /// for a text.
    Simmatrix(SimmatrixArgs),
    /// Run a gated attention layer over a text and print the trace.
    ///
    /// Embeddings come from a seeded random table keyed by vocabulary index
    /// — a toy stand-in for a trained encoder. Outputs illustrate the
    /// mechanism; they are not trained-model behavior.
    Attend(AttendArgs),
    /// Rank vertices or tokens by integrated-gradients attribution of a
    /// probe over the gated attention layer.
    ///
    /// Uses the same toy random embeddings as `attend`; see that command's
    /// caveat.
    Attribute(AttributeArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Corpus file: one utterance per line, `#` lines ignored.
    corpus: PathBuf,
    /// Reduced dimension R; the fitted simplex has R+1 vertices.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Words seen fewer than this many times collapse into [UNK].
    #[arg(long, default_value_t = 1)]
    min_count: u32,
    /// Enclosure slack: barycentric coordinates may dip this far below zero.
    #[arg(long, default_value_t = 1e-6)]
    slack: f64,
    /// Seed echoed into the artifact; the fit itself draws no random numbers.
    #[arg(long, env = "CPM_SEED", default_value_t = 0)]
    seed: u64,
    /// Output path for the model artifact JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write scatter data (reduced coordinates plus vertices) to this
    /// path.
    #[arg(long)]
    emit_points: Option<PathBuf>,
}

#[derive(Args)]
struct TopwordsArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Vertex index to report.
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    vertex: Option<usize>,
    /// Report every vertex.
    #[arg(long)]
    all: bool,
    /// Words per vertex; capped at the vocabulary size.
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct NearestArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Corpus file to search; a count mismatch against the artifact's
    /// provenance emits a warning.
    #[arg(long)]
    corpus: PathBuf,
    /// Vertex index to search around.
    #[arg(long)]
    vertex: usize,
    /// How many utterances to list.
    #[arg(short = 'm', long = "count", default_value_t = 3)]
    m: usize,
}

#[derive(Args)]
struct CoeffsArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Text to decompose.
    #[arg(long)]
    text: String,
}

#[derive(Args)]
struct SimmatrixArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Text whose tokens are compared pairwise.
    #[arg(long)]
    text: String,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct AttendArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Text to attend over.
    #[arg(long)]
    text: String,
    /// Number of attention heads.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Per-head width.
    #[arg(long, default_value_t = 8)]
    head_dim: usize,
    /// Embedding width; defaults to heads * head-dim.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Seed for the embedding table and layer weights.
    #[arg(long, env = "CPM_SEED", default_value_t = 0)]
    seed: u64,
    /// Also emit the ungated attention matrices for comparison.
    #[arg(long)]
    vanilla: bool,
}

#[derive(Args)]
struct AttributeArgs {
    /// Model artifact written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Text to attribute.
    #[arg(long)]
    text: String,
    /// What to attribute the probe value to.
    #[arg(long, value_enum)]
    target: Target,
    /// Midpoint integration steps.
    #[arg(long, default_value_t = 128)]
    steps: usize,
    /// How many entries to rank.
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Number of attention heads.
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Per-head width.
    #[arg(long, default_value_t = 8)]
    head_dim: usize,
    /// Embedding width; defaults to heads * head-dim.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Seed for the embedding table and layer weights.
    #[arg(long, env = "CPM_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    /// Attribute to the composition coefficients, one value per vertex.
    VertexCoeffs,
    /// Attribute to the token embeddings, summed per token.
    Tokens,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Topwords(args) => commands::topwords(&args),
        Command::Nearest(args) => commands::nearest(&args),
        Command::Coeffs(args) => commands::coeffs(&args),
        Command::Simmatrix(args) => commands::simmatrix(&args),
        Command::Attend(args) => commands::attend(&args),
        Command::Attribute(args) => commands::attribute(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let payload = serde_json::json!({
                "error": { "kind": kind, "message": format!("{err:#}") }
            });
            eprintln!("{payload}");
            ExitCode::from(code)
        }
    }
}

/// Maps an error to its machine-readable kind tag and process exit code:
/// I/O problems exit 1, everything else (validation, numerics) exits 2.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(cpm) = cause.downcast_ref::<CpmError>() {
            return (cpm.kind(), if cpm.is_io() { 1 } else { 2 });
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", 1);
        }
    }
    ("cli", 2)
}
