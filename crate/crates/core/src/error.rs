use std::path::PathBuf;

/// Errors produced by the tracking library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox {
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        reason: &'static str,
    },

    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("cost matrix entry ({row}, {col}) is not finite: {value}")]
    NonFiniteCost { row: usize, col: usize, value: f64 },

    #[error("triplet loss of an empty triplet list is undefined")]
    EmptyTriplets,

    #[error("no valid batch after {attempts} attempts")]
    NoValidBatch { attempts: usize },

    #[error("frame {frame}: {reason}")]
    Frame { frame: u64, reason: String },

    #[error("{}line {line}: {reason}", path_prefix(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        reason: String,
    },

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn path_prefix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!("{}: ", p.display()),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: None,
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn frame(frame: u64, reason: impl Into<String>) -> Self {
        Error::Frame {
            frame,
            reason: reason.into(),
        }
    }

    /// Attaches a file path to a parse error.
    pub fn in_file(self, file: &std::path::Path) -> Self {
        match self {
            Error::Parse { line, reason, .. } => Error::Parse {
                path: Some(file.to_path_buf()),
                line,
                reason,
            },
            other => other,
        }
    }

    /// Line number for parse errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
