use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("component absent: {0}")]
    ComponentAbsent(&'static str),

    #[error("moment of order q={q} is infinite: E|X*(t)|^q = ∞ for q > γ = {gamma} and every t > 0")]
    InfiniteMoment { q: f64, gamma: f64 },

    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),

    #[error("nonpositive moment at t={t}, q={q}")]
    NonPositiveMoment { t: f64, q: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Process exit code: 2 for validation and configuration errors, 3 for
    /// I/O failures and malformed data files.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Io { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
