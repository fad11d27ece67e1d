use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("regions overlap: {0}")]
    Overlap(String),
    #[error("box mismatch between grid functions")]
    BoxMismatch,
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid fractional order {0}: must lie in (0, 1)")]
    InvalidOrder(f64),
    #[error("support of u touches the box boundary; the quadrature oracle needs compact support")]
    SupportTouchesBoundary,
    #[error("exterior datum is not supported in the exterior of omega")]
    NotExteriorSupported,
    #[error("zero is (numerically) a Dirichlet eigenvalue: smallest singular value {margin:.3e} below threshold {threshold:.3e}")]
    EigenvalueCondition { margin: f64, threshold: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("regularization parameter {0} is not admissible")]
    InvalidAlpha(f64),
    #[error("optimizer did not converge within {iterations} iterations (stationarity {stationarity:.3e})")]
    NonConvergence {
        iterations: usize,
        stationarity: f64,
    },
    #[error("minimal-L2 functional is unbounded below: datum component outside the discrete range {floor:.3e} exceeds alpha {alpha:.3e}")]
    UnboundedFunctional { floor: f64, alpha: f64 },
    #[error(
        "exterior datum f must be nonzero: the single measurement requires f in H^s(W1) \\ {{0}}"
    )]
    ZeroDatum,
    #[error("u vanishes identically on omega; the quotient for q is undefined")]
    VanishingSolution,
    #[error("geometry precondition violated: {0}")]
    Geometry(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step ({step}) failed: {source}")]
    Step {
        step: u8,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn at_step(self, step: u8) -> Error {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through pipeline step labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
