use std::path::PathBuf;

/// Failures of the file-facing layer. Core failures pass through unchanged.
#[derive(Debug, thiserror::Error)]
pub enum OpfError {
    #[error(transparent)]
    Core(#[from] opf_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: column `{column}` row {row}: `{value}` is not a number")]
    NonNumeric {
        path: PathBuf,
        column: String,
        row: usize,
        value: String,
    },
}

pub type Result<T, E = OpfError> = std::result::Result<T, E>;

/// Process exit codes of the command line.
pub mod exit {
    pub const OK: u8 = 0;
    pub const VALIDATION: u8 = 1;
    pub const ESTIMATION: u8 = 2;
    pub const IO: u8 = 3;
}

impl OpfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OpfError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            OpfError::Core(e) if e.is_validation() => exit::VALIDATION,
            OpfError::Core(_) => exit::ESTIMATION,
            OpfError::Io { .. } => exit::IO,
            // a CSV read can fail on the file or on its contents
            OpfError::Csv { source, .. } if source.is_io_error() => exit::IO,
            OpfError::Csv { .. } | OpfError::Json { .. } | OpfError::NonNumeric { .. } => exit::VALIDATION,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            OpfError::Core(e) => e.code(),
            OpfError::Io { .. } => "Io",
            OpfError::Csv { .. } => "Csv",
            OpfError::Json { .. } => "Json",
            OpfError::NonNumeric { .. } => "NonNumeric",
        }
    }
}
