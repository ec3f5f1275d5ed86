use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("duplicate utterance id `{0}`")]
    DuplicateUtt(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad magic bytes in model container")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("model container is truncated")]
    Truncated,
    #[error("duplicate container section `{0}`")]
    DuplicateSection(String),
    #[error("missing or mistyped container section `{0}`")]
    MissingSection(String),

    #[error("paired views disagree: {0}")]
    PairMismatch(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("covariance of the {0} view has effective rank 0")]
    DegenerateRank(&'static str),

    #[error("requested rank {requested} exceeds maximum {max}")]
    RankExceeded { requested: usize, max: usize },
    #[error("within-class scatter is singular")]
    SingularScatter,
    #[error("operation requires speaker labels on every record")]
    MissingLabels,
    #[error("vector `{0}` has (near) zero norm")]
    DegenerateVector(String),
    #[error("speaker factor count {q} exceeds dimension {dim}")]
    QTooLarge { q: usize, dim: usize },
    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("no {0} trials in key")]
    EmptyClass(&'static str),
    #[error("keyed trial ({0}, {1}) has no score")]
    UnscoredTrial(String, String),
    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("bad synthetic config: {0}")]
    BadConfig(String),
    #[error("not enough {kind} pairs: requested {requested}, available {available}")]
    NotEnoughPairs {
        kind: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
