use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: not an FGRV1 file: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: truncated payload: header promises {expected} bytes, found {found}", path.display())]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("invalid video: {0}")]
    InvalidVideo(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("rank-deficient design: column(s) {} are collinear with earlier columns", .columns.join(", "))]
    RankDeficient { columns: Vec<&'static str> },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
