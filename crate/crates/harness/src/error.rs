use std::path::PathBuf;

use thiserror::Error;

/// Problems with a config file or a config override. These map to exit code 2.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    ParseError(String),
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("invalid value for {path:?}: {message}")]
    InvalidValue { path: String, message: String },
    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] nexus_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field {field:?} missing from {file}")]
    FieldMissing { field: String, file: PathBuf },
    #[error("no data rows in {0}")]
    EmptyData(PathBuf),
    #[error("{0}")]
    Failed(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
