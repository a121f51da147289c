use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Numeric => 3,
            ErrorKind::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: non-positive price {price} for {symbol}")]
    NonPositivePrice { line: usize, symbol: String, price: f64 },

    #[error("duplicate timestamp {timestamp} for symbol {symbol}")]
    DuplicateTimestamp { symbol: String, timestamp: String },

    #[error("no computable return for {symbol}")]
    EmptyReturns { symbol: String },

    #[error("{found} symbol(s) survive alignment, at least 2 are required")]
    InsufficientUniverse { found: usize },

    #[error("no timestamps fall inside the requested range")]
    EmptyRange,

    #[error("{symbol}: zero local variance at {timestamp}")]
    DegenerateWindow { symbol: String, timestamp: String },

    #[error("window length {length} exceeds the {available} available timestamps")]
    WindowTooLong { length: usize, available: usize },

    #[error("{symbol} has zero variance inside the window")]
    DegenerateSeries { symbol: String },

    #[error("incompatible universes: {0}")]
    IncompatibleUniverse(String),

    #[error(
        "power iteration did not converge in {iterations} iterations \
         (estimate {estimate}, residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        estimate: f64,
        residual: f64,
    },

    #[error("target matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("symbol {0} has no sector assignment")]
    MissingSector(String),

    #[error("the states stage needs a sector map, none was supplied")]
    MissingSectorMap,

    #[error("non-finite value at cell ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonConvergence { .. }
            | Error::NotPositiveSemidefinite { .. }
            | Error::DegenerateWindow { .. }
            | Error::DegenerateSeries { .. }
            | Error::NonFinite { .. } => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Validation,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
