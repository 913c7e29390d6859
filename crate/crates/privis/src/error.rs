use std::path::{Path, PathBuf};

use privis_core::PrivacyLevel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] privis_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("refusing to write {width}x{height} frames under policy {policy:?} (frames would be {level:?})")]
    PolicyViolation {
        width: usize,
        height: usize,
        level: PrivacyLevel,
        policy: PrivacyLevel,
    },
    #[error("privacy audit failed: {0} file(s) larger than the policy allows, first: {1}")]
    Audit(usize, PathBuf),
    #[error("inconsistent reports: {0}")]
    Report(String),
}

impl Error {
    /// Short stable category used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(privis_core::Error::PrivateProvenance) => "provenance",
            Error::Core(privis_core::Error::PrivacyViolation { .. }) => "privacy",
            Error::Core(privis_core::Error::Config(_)) => "config",
            Error::Core(_) => "compute",
            Error::Io { .. } => "io",
            Error::Manifest { .. } => "manifest",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::PolicyViolation { .. } | Error::Audit(..) => "privacy",
            Error::Report(_) => "report",
        }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
