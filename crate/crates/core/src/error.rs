use std::path::PathBuf;

/// Errors surfaced by the library and the `covquant` binary.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |A - A^H| = {asymmetry:.3e}")]
    NotHermitian { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix columns are not orthonormal: max |W^H W - I| = {deviation:.3e}")]
    NotOrthonormal { deviation: f64 },

    #[error("requested {requested} eigenvectors but only {available} eigenvalues are numerically positive")]
    InsufficientRank { requested: usize, available: usize },

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("invalid config: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("CSV schema mismatch in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("failed to parse {what}: {reason}")]
    Parse { what: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
