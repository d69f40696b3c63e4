use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("empty vector")]
    EmptyVector,

    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("caption set is empty")]
    EmptyCaptionSet,

    #[error("target set is empty")]
    EmptyTargetSet,

    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("sinkhorn epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("query {query} has no transition vector but transition is enabled")]
    MissingDelta { query: String },

    #[error("candidate database is empty")]
    EmptyDatabase,

    #[error("query {query} references unknown candidate id {id}")]
    UnknownSubsetId { query: String, id: String },

    #[error("no ground truth for query {query}")]
    MissingTruth { query: String },

    #[error("query {query} has no scored candidates")]
    EmptyRanking { query: String },

    #[error("ranking for query {query} holds {have} entries, fewer than k={k}")]
    KExceedsPool { query: String, k: usize, have: usize },

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported bank version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },

    #[error("bank dimension is zero")]
    DimZero,

    #[error("{owner}: row {row} out of range for bank with {count} rows")]
    RowOutOfRange { owner: String, row: u64, count: u64 },

    #[error("duplicate candidate id {0}")]
    DuplicateCandidateId(String),

    #[error("duplicate query id {0}")]
    DuplicateQueryId(String),

    #[error("bank {path} has dim {found}, expected {expected}")]
    DimMismatchAcrossBanks { path: PathBuf, expected: usize, found: usize },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("exact OT oracle needs a square problem with at most 8 points, got {k}x{m}")]
    TooLargeForExactOt { k: usize, m: usize },

    #[error("degenerate generator parameters: {0}")]
    DegenerateParams(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    /// Stable machine-readable code, printed on the diagnostic stream by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ZeroVector { .. } => "ZeroVector",
            Error::NonFinite { .. } => "NonFinite",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::EmptyVector => "EmptyVector",
            Error::AlphaOutOfRange(_) => "AlphaOutOfRange",
            Error::EmptyCaptionSet => "EmptyCaptionSet",
            Error::EmptyTargetSet => "EmptyTargetSet",
            Error::NonPositiveTau(_) => "NonPositiveTau",
            Error::NonPositiveEpsilon(_) => "NonPositiveEpsilon",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::MissingDelta { .. } => "MissingDelta",
            Error::EmptyDatabase => "EmptyDatabase",
            Error::UnknownSubsetId { .. } => "UnknownSubsetId",
            Error::MissingTruth { .. } => "MissingTruth",
            Error::EmptyRanking { .. } => "EmptyRanking",
            Error::KExceedsPool { .. } => "KExceedsPool",
            Error::BadMagic(_) => "BadMagic",
            Error::UnsupportedVersion(_) => "UnsupportedVersion",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::DimZero => "DimZero",
            Error::RowOutOfRange { .. } => "RowOutOfRange",
            Error::DuplicateCandidateId(_) => "DuplicateCandidateId",
            Error::DuplicateQueryId(_) => "DuplicateQueryId",
            Error::DimMismatchAcrossBanks { .. } => "DimMismatchAcrossBanks",
            Error::Parse { .. } => "ParseError",
            Error::TooLargeForExactOt { .. } => "TooLargeForExactOT",
            Error::DegenerateParams(_) => "DegenerateParams",
            Error::Io { .. } => "Io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
