use std::path::PathBuf;

use wbe_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const NUMERICAL: i32 = 2;
    pub const IO: i32 = 3;
}

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::SolverDivergence { .. } | CoreError::NanLoss { .. } | CoreError::NonFinite(_) => exit::NUMERICAL,
        CoreError::Sample { source, .. } => core_code(source),
        CoreError::Io(_)
        | CoreError::IoAt { .. }
        | CoreError::BadMagic { .. }
        | CoreError::UnsupportedVersion(_)
        | CoreError::UnknownDType(_)
        | CoreError::DimOverflow { .. }
        | CoreError::Truncated { .. }
        | CoreError::Json(_) => exit::IO,
        _ => exit::CONFIG,
    }
}

impl HarnessError {
    pub fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => exit::CONFIG,
            HarnessError::Core(e) => core_code(e),
            HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::Json(_) => exit::IO,
        }
    }
}
