use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}: not a tensor file")]
    BadMagic(PathBuf),
    #[error("truncated tensor payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing bytes after tensor payload: {0}")]
    TrailingBytes(usize),
    #[error("unsupported tensor rank {0} (expected 1, 2 or 3)")]
    BadRank(usize),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("label {label} out of range for vocabulary of size {vocab}")]
    LabelOutOfRange { label: usize, vocab: usize },
    #[error("blank (index 0) is not allowed in a target label sequence")]
    BlankInLabels,
    #[error("{frames} frames cannot align {labels} labels (at least {required} frames needed)")]
    Infeasible {
        frames: usize,
        labels: usize,
        required: usize,
    },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("expansion ratios r_left={left} + r_right={right} exceed 1")]
    RatioSum { left: f64, right: f64 },
    #[error("malformed spike segments: {0}")]
    Segments(String),
    #[error("empty reference: word error rate is undefined")]
    EmptyReference,
    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing reference data for utterance {0}")]
    MissingReference(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl std::fmt::Display, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// True for failures caused by arithmetic (divergence, non-finite values)
    /// rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
