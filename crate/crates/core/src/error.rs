use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: row {row}: {message}")]
    Row { path: PathBuf, row: usize, message: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("strata configuration: {0}")]
    Config(String),

    #[error("observed cell (z={z}, d={d}) has no compatible principal stratum under the configuration")]
    EmptyCell { z: u8, d: u8 },

    #[error("non-finite log posterior{}: {what}", unit.map(|u| format!(" at unit {u}")).unwrap_or_default())]
    NonFinite { unit: Option<usize>, what: String },

    #[error("{0}")]
    UnsupportedFamily(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("sampler: {0}")]
    Sampler(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
