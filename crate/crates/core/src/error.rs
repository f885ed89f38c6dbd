use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("goal has no positive component")]
    AllZeroGoal,

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("preference mapping requires a preference mode, got an explicit target")]
    ExplicitModeNotMappable,

    #[error("trace is empty")]
    EmptyTrace,

    #[error("trace timestamps decrease at line {line}")]
    NonMonotone { line: usize },

    #[error("cannot parse trace line {line}: {text:?}")]
    TraceParse { line: usize, text: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("convolution input length {len} is shorter than kernel width {width}")]
    InputTooShort { len: usize, width: usize },

    #[error("ack for unknown sequence number {seq} on flow {flow}")]
    UnknownSeq { flow: u32, seq: u64 },

    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },

    #[error("no usable goal deltas in the observation window")]
    Degenerate,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: String, expected: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::RawIo(_))
    }
}
