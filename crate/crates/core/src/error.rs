//! Error type shared by all pipeline stages.

use crate::simplex::Simplex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CpmError {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no nonempty utterances")]
    NoNonemptyUtterances,

    #[error("rank deficient: max usable R is {max_usable}")]
    RankDeficient { max_usable: usize },

    #[error("points span fewer than {r} dimensions")]
    DegeneratePoints { r: usize },

    #[error("degenerate simplex")]
    DegenerateSimplex,

    /// Iteration cap reached while the best simplex still violates the
    /// enclosure slack. Carries the best simplex found so callers can inspect
    /// or salvage it.
    #[error("enclosure violation {violation:.3e} exceeds slack after iteration cap")]
    EnclosureNotMet {
        violation: f64,
        simplex: Box<Simplex>,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty token list")]
    EmptyTokens,

    #[error("matrix row {row} is not row-stochastic (sum {sum})")]
    NotRowStochastic { row: usize, sum: f64 },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear subproblem failed: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CpmError {
    /// True for I/O-flavored failures, false for validation/math failures.
    /// The CLI maps the former to exit code 1 and the latter to exit code 2.
    pub fn is_io(&self) -> bool {
        matches!(self, CpmError::Io(_) | CpmError::Json(_))
    }

    /// Short machine-readable tag for error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            CpmError::EmptyCorpus => "empty_corpus",
            CpmError::NoNonemptyUtterances => "no_nonempty_utterances",
            CpmError::RankDeficient { .. } => "rank_deficient",
            CpmError::DegeneratePoints { .. } => "degenerate_points",
            CpmError::DegenerateSimplex => "degenerate_simplex",
            CpmError::EnclosureNotMet { .. } => "enclosure_not_met",
            CpmError::DimensionMismatch { .. } => "dimension_mismatch",
            CpmError::IndexOutOfRange { .. } => "index_out_of_range",
            CpmError::EmptyTokens => "empty_tokens",
            CpmError::NotRowStochastic { .. } => "not_row_stochastic",
            CpmError::SchemaVersion { .. } => "schema_version",
            CpmError::InvalidParameter(_) => "invalid_parameter",
            CpmError::Solver(_) => "solver",
            CpmError::Io(_) => "io",
            CpmError::Json(_) => "json",
        }
    }
}
