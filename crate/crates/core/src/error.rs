use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or dimensions that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("node {node} has zero degree; enable self-loops or drop isolated nodes")]
    DegenerateDegree { node: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset has no nodes")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for this error: 2 for bad input or configuration,
    /// 3 for failures that happen while a run is executing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Divergence { .. } | Error::DegenerateVector(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Structural(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
}
