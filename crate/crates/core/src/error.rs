use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("audio too short: {samples} samples, need at least {window}")]
    AudioTooShort { samples: usize, window: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("silent interferer")]
    SilentInterferer,
    #[error("no noise sources")]
    NoNoiseSources,
    #[error("invalid factor: {0}")]
    InvalidFactor(f64),
    #[error("duplicate speaker: {0}")]
    DuplicateSpeaker(String),
    #[error("invalid head split: {channels} channels over {heads} heads")]
    InvalidHeadSplit { channels: usize, heads: usize },
    #[error("degenerate embedding")]
    DegenerateEmbedding,
    #[error("invalid exponential schedule: start margin must be positive")]
    InvalidExponentialSchedule,
    #[error("invalid dim")]
    InvalidDim,
    #[error("label leak into reserved classes: class {0}")]
    LabelLeak(usize),
    #[error("bad mapping: stage-1 class {0} does not exist")]
    BadMapping(usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no embeddings")]
    NoEmbeddings,
    #[error("embedding equals domain mean")]
    EqualsDomainMean,
    #[error("degenerate cohort")]
    DegenerateCohort,
    #[error("cohort too small: {size} centers, top_k {top_k}")]
    CohortTooSmall { size: usize, top_k: usize },
    #[error("degenerate labels")]
    DegenerateLabels,
    #[error("trial mismatch: {0}")]
    TrialMismatch(String),
    #[error("zero total weight")]
    ZeroTotalWeight,
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("stage dependency missing: {0}")]
    StageDependencyMissing(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { key: key.into(), msg: msg.into() }
    }

    /// Process exit code: 2 for configuration problems, 3 for everything
    /// that went wrong with the data itself.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_)
            | Error::Config { .. }
            | Error::InvalidExponentialSchedule
            | Error::InvalidDim
            | Error::InvalidHeadSplit { .. } => 2,
            _ => 3,
        }
    }
}
