use thiserror::Error;

pub type Result<T> = std::result::Result<T, UppError>;

#[derive(Debug, Error)]
pub enum UppError {
    #[error("regular graph with {n} nodes and degree {degree} is not realizable")]
    UnrealizableRegularDegree { n: usize, degree: usize },
    #[error("grid {rows}x{cols} does not have {n} nodes")]
    GridDimensionMismatch { rows: usize, cols: usize, n: usize },
    #[error("graph is disconnected")]
    DisconnectedGraph,
    #[error("{0} near-zero eigenvalues, expected exactly one")]
    MoreThanOneNearZeroEigenvalue(usize),
    #[error("no connected layout after {0} attempts")]
    GenerationExhausted(usize),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient at node {node}")]
    NonFiniteGradient { node: usize },
    #[error("node {node} read a message from non-neighbor {peer}")]
    NodeNonlocalAccess { node: usize, peer: usize },
    #[error("initial dual is not in the orthogonal complement of consensus (block sum {0:.3e})")]
    QNotInSPerp(f64),
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),
    #[error("parameter condition violated: {0}")]
    ConditionViolation(String),
    #[error("infeasible spectrum: {0}")]
    InfeasibleSpectrum(String),
    #[error("infeasible kappa_B: {0}")]
    InfeasibleKappaB(String),
    #[error("optimal value f* required but not available")]
    MissingFStar,
    #[error("diagnostic needs a single-loop run: {0}")]
    WrongVariant(String),
    #[error("objective kind does not support {0}")]
    UnsupportedKind(String),
    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<UppError>,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UppError {
    /// True for errors that mean a mathematical precondition failed, as
    /// opposed to bad input files or arguments.
    pub fn is_invariant_violation(&self) -> bool {
        match self {
            UppError::AtIteration { source, .. } => source.is_invariant_violation(),
            UppError::Config(_)
            | UppError::Parse(_)
            | UppError::Io(_)
            | UppError::Csv(_)
            | UppError::Json(_)
            | UppError::InvalidTopology(_)
            | UppError::GridDimensionMismatch { .. }
            | UppError::UnrealizableRegularDegree { .. } => false,
            _ => true,
        }
    }
}
