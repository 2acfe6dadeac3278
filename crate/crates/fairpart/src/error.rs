use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Total mixture density is zero at the queried location; the posterior
    /// is undefined there and the caller must not request it.
    #[error("total population density is zero at the queried location")]
    ZeroDensity,

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("group {group} has zero total count across all sites")]
    EmptyGroup { group: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown site id `{0}`")]
    UnknownSite(String),

    #[error("facility index {index} out of range (K = {k})")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("iterates diverged to non-finite values")]
    NonFinite,

    #[error("linear program is infeasible")]
    Infeasible,

    /// More than 0.1% of drawn samples landed outside the effective support.
    #[error("{discarded} of {total} samples fell outside the population support")]
    Degenerate { discarded: u64, total: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
