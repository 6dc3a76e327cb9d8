use std::path::PathBuf;

/// Errors of the file and command layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] kboost_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: {detail}")]
    ConfigFile { path: PathBuf, detail: String },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
    #[error("checkpoint was trained for config {found}, current config hashes to {expected} (pass --allow-mismatch to evaluate anyway)")]
    HashMismatch { expected: String, found: String },
    #[error("{0} already exists with different contents; pass --force to overwrite")]
    Collision(PathBuf),
    #[error("csv export to {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 configuration, 3 numeric fault, 4 causality, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use kboost_core::Error as E;
        match self {
            Error::Core(E::Config(_)) | Error::ConfigFile { .. } | Error::HashMismatch { .. } | Error::Collision(_) => 2,
            Error::Core(E::NumericFault(_) | E::Diverged { .. }) => 3,
            Error::Core(E::Causality { .. }) => 4,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
