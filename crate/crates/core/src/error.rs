use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or graph structure do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// Caller-supplied numbers are unusable (e.g. a non-finite parameter).
    #[error("data error: {0}")]
    Data(String),

    /// A non-finite value appeared while evaluating or differentiating a graph.
    #[error("non-finite {stage} value at node {node} ({op})")]
    NonFinite {
        stage: &'static str,
        node: usize,
        op: &'static str,
    },

    /// The target of a Manhattan ratio has zero norm; the trial must be redrawn.
    #[error("target has zero Manhattan norm; resample required")]
    ResampleRequired,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: u64,
        #[source]
        source: Box<Error>,
        last_good: Box<crate::checkpoint::Checkpoint>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
