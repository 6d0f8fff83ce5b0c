use std::path::PathBuf;

use crate::raster::GridGeometry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell id {0} is outside the grid")]
    InvalidCell(usize),

    #[error("cell {0} is a no-data cell and not part of the state space")]
    NoDataCell(usize),

    #[error("cells {from} and {to} are not rook neighbors")]
    NotNeighbors { from: usize, to: usize },

    #[error("cell {0} has no valid neighbors (absorbing)")]
    AbsorbingCell(usize),

    #[error("layer `{layer}` is not aligned with the state-space grid: expected {expected}, found {found}")]
    Misaligned {
        layer: String,
        expected: GridGeometry,
        found: GridGeometry,
    },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("{}line {line}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        message: String,
    },

    #[error("missing column `{column}`{}", path.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default())]
    MissingColumn { path: Option<PathBuf>, column: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("value {value} is outside the domain [{min}, {max}]")]
    OutOfDomain { value: f64, min: f64, max: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("column sets differ between expansions: {0}")]
    ColumnMismatch(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
