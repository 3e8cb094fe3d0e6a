use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph has no vertices")]
    EmptyGraph,
    #[error("vertex index {index} out of range for graph with {n} vertices")]
    VertexOutOfRange { index: usize, n: usize },
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge between {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("edge ({i},{j}) has invalid weight {w}; weights must be finite and positive")]
    InvalidWeight { i: usize, j: usize, w: f64 },
    #[error("graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },
    #[error("no connected graph after {attempts} draws; parameters are too sparse")]
    DisconnectedAfterRetries { attempts: usize },
    #[error("vertices {0} and {1} coincide; inverse-distance weight is undefined")]
    CoincidentVertices(usize, usize),
    #[error("vertex {0} has zero degree")]
    IsolatedVertex(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation needs the Laplacian eigendecomposition, but the dictionary was built without it")]
    MissingSpectrum,
    #[error("every atom has zero norm; nothing to select")]
    EmptyCandidateSet,
    #[error("QP is infeasible: {0}")]
    InfeasibleProblem(String),
    #[error("initial kernels violate the spectral constraints by {violation:e}")]
    InfeasibleInit { violation: f64 },
    #[error("band {band} references eigen-index {index} but the spectrum has {n} eigenvalues")]
    BandOutOfRange { band: usize, index: usize, n: usize },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
