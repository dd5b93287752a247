use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes. The CLI maps `Config` to exit 2, the data classes to 3
/// and the numeric classes to 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("no observations")]
    Empty,
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("estimation: {0}")]
    Estimation(String),
    #[error("no convergence: {0}")]
    Convergence(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }
}
