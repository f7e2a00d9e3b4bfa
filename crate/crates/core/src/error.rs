use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {points} points but {masses} masses")]
    LengthMismatch { points: usize, masses: usize },

    #[error("negative mass {mass} at atom {index}")]
    NegativeMass { index: usize, mass: f64 },

    #[error("distribution has empty support or zero total mass")]
    EmptySupport,

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("cost matrix is not normalized to a unit-diameter space (max cost {diameter})")]
    Unnormalized { diameter: f64 },

    #[error("instance too large: {message}")]
    TooLarge { message: String },

    #[error("parse error in {path:?}: {message}")]
    Parse { path: Option<PathBuf>, message: String },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn parse(path: Option<&std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.map(|p| p.to_path_buf()),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Parse { .. } => 2,
            Error::DimensionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::NegativeMass { .. }
            | Error::EmptySupport
            | Error::InvalidParameter { .. }
            | Error::Unnormalized { .. }
            | Error::TooLarge { .. } => 3,
            Error::Solver(_) => 4,
        }
    }
}
