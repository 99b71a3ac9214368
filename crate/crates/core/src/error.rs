use std::path::PathBuf;

/// Crate-wide error type. Variants carry enough context to print a
/// one-line diagnostic naming the offending input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav file {path}: {detail}")]
    MalformedWav { path: PathBuf, detail: String },

    #[error("unsupported wav encoding in {path}: format code {format_code}, {bits} bits/sample")]
    UnsupportedWavEncoding {
        path: PathBuf,
        format_code: u16,
        bits: u16,
    },

    #[error("malformed midi file {path}: {detail}")]
    MalformedMidi { path: PathBuf, detail: String },

    #[error("audio clip too short: {samples} samples, need at least {needed}")]
    ClipTooShort { samples: usize, needed: usize },

    #[error("non-finite sample at index {index}")]
    NonFiniteSample { index: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("feature bin count mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },

    #[error("malformed csv {path}: line {line}: {detail}")]
    MalformedCsv {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("malformed json {path}: {detail}")]
    MalformedJson { path: PathBuf, detail: String },

    #[error("cost matrix is empty")]
    EmptyCostMatrix,

    #[error("non-finite cost at cell ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("instance above enumeration bound: {detail}")]
    OracleBound { detail: String },

    #[error("invalid inflection points: {0}")]
    InvalidInflections(String),

    #[error("invalid splice: {0}")]
    InvalidSplice(String),

    #[error("sequence too short: {frames} frames cannot host {jumps} jumps (need {needed})")]
    SequenceTooShort {
        frames: usize,
        jumps: usize,
        needed: usize,
    },

    #[error("jump count {0} outside the supported range 1..=4")]
    JumpCountOutOfRange(usize),

    #[error("path does not cover performance frame {frame}")]
    PathCoverage { frame: usize },

    #[error("smoothing factor must be positive, got {0}")]
    NonPositiveLambda(f64),

    #[error("negative smoothing factor {0}")]
    NegativeLambda(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("negative distance {0}")]
    NegativeDistance(f64),

    #[error("ground truth event at {time_s} s lies outside the aligned span [{start_s}, {end_s}] s")]
    EventOutsideSpan {
        time_s: f64,
        start_s: f64,
        end_s: f64,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("malformed weights file {path}: {detail}")]
    MalformedWeights { path: PathBuf, detail: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
