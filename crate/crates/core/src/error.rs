use std::path::PathBuf;

use thiserror::Error;

use crate::emf::HistogramPair;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid privacy budget {0}: epsilon must be finite and positive")]
    InvalidBudget(f64),

    #[error("value {value} outside domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("degenerate value range: dataset needs at least two distinct values")]
    DegenerateRange,

    #[error("invalid bucket grid: {0}")]
    InvalidGrid(String),

    #[error("bucket index {index} out of range (len {len})")]
    BucketIndex { index: usize, len: usize },

    #[error("poison range [{lo}, {hi}] is not one-sided about reference {reference}")]
    NotBiased { lo: f64, hi: f64, reference: f64 },

    #[error("invalid poison spec: {0}")]
    InvalidPoisonSpec(String),

    #[error("EM did not converge within {iterations} iterations")]
    ConvergenceFailure {
        iterations: usize,
        last: Box<HistogramPair>,
    },

    #[error("observed counts do not match grid: {0}")]
    CountsMismatch(String),

    #[error("all poison buckets suppressed while gamma_hat = {0} > 0")]
    InconsistentSuppression(f64),

    #[error("poison histogram has no mass")]
    NoPoisonMass,

    #[error("estimated attacker count {m_hat} leaves no normal reports out of {reports}")]
    DegenerateFilter { m_hat: f64, reports: usize },

    #[error("no group carries signal (every estimated normal population is zero)")]
    NoSignal,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: column {column:?} not found")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: {bad_rows} unparsable rows (first at row {first_row})")]
    UnparsableRows {
        path: PathBuf,
        bad_rows: usize,
        first_row: usize,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBudget(_) => "invalid_budget",
            Error::Domain { .. } => "domain",
            Error::DegenerateRange => "degenerate_range",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::BucketIndex { .. } => "bucket_index",
            Error::NotBiased { .. } => "not_biased",
            Error::InvalidPoisonSpec(_) => "invalid_poison_spec",
            Error::ConvergenceFailure { .. } => "convergence_failure",
            Error::CountsMismatch(_) => "counts_mismatch",
            Error::InconsistentSuppression(_) => "inconsistent_suppression",
            Error::NoPoisonMass => "no_poison_mass",
            Error::DegenerateFilter { .. } => "degenerate_filter",
            Error::NoSignal => "no_signal",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::MissingColumn { .. } => "missing_column",
            Error::UnparsableRows { .. } => "unparsable_rows",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
