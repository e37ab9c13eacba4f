use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("graph integrity: {0}")]
    Integrity(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("kernel: {0}")]
    Kernel(String),

    #[error("optimizer: non-finite gradient in parameter slice `{slice}`")]
    Optimizer { slice: String },

    #[error("model: {0}")]
    Model(String),

    #[error("federation: {0}")]
    Federation(String),

    #[error("score: {0}")]
    Score(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("report: {0}")]
    Report(String),

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
    pub(crate) fn shape(op: &str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Kernel(format!(
            "{op}: shape mismatch {}x{} vs {}x{}",
            lhs.0, lhs.1, rhs.0, rhs.1
        ))
    }

    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
