use thiserror::Error;

/// Errors raised anywhere in the inference stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("particle count must be at least 2, got {0}")]
    TooFewParticles(usize),
    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),
    #[error("invalid interval: lo {lo} > hi {hi}")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("weight floor {eps} infeasible for {np} particles")]
    InfeasibleFloor { eps: f64, np: usize },
    #[error("simplex projection did not converge after {0} iterations")]
    ProjectionDiverged(usize),
    #[error("coincident points: zero distance in measurement function")]
    ZeroDistance,
    #[error("empty observation subset")]
    EmptySubset,
    #[error("subset size {size} out of range 1..={n}")]
    SubsetSize { size: usize, n: usize },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },
    #[error("enumeration of {terms} terms exceeds budget {budget}")]
    BudgetExceeded { terms: u128, budget: u64 },
    #[error("singular Fisher information matrix")]
    SingularFisher,
    #[error("tape does not match network: {0}")]
    TapeMismatch(String),
    #[error("missing complexity parameter `{0}`")]
    MissingParameter(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
