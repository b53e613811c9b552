use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative flow {value} at ({row}, {col})")]
    NegativeFlow { row: usize, col: usize, value: f64 },

    #[error("non-zero diagonal flow {value} at node {node}")]
    DiagonalFlow { node: usize, value: f64 },

    #[error("point ({x}, {y}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },

    #[error("trip on line {line}: {source}")]
    Trip {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("missing edge features for pair ({0}, {1})")]
    MissingEdge(usize, usize),

    #[error("self pair ({0}, {0}) is not an edge")]
    SelfPair(usize),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("batch normalisation needs at least 2 rows in training mode, got {0}")]
    BatchTooSmall(usize),

    #[error("ipf did not converge after {sweeps} sweeps (residual {residual:e})")]
    IpfDiverged { sweeps: usize, residual: f64 },

    #[error("glm diverged (coefficient norm {norm:e}); consider regularization")]
    Separation { norm: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no trained model at {0}; run `train` first")]
    MissingModel(PathBuf),

    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),

    #[error("predictions missing for {} test pairs, first {:?}", .0.len(), .0.first())]
    MissingPredictions(Vec<(usize, usize)>),

    #[error("split: {0}")]
    Split(String),

    #[error("leakage guard recorded {0} reads of withheld flows")]
    Leakage(usize),

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
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from the input data rather than from a bug
    /// or from an I/O failure.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
