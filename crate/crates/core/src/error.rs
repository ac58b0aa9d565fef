use thiserror::Error;

pub type Result<T> = std::result::Result<T, NptError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NptError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular: smallest eigenvalue {eigenvalue:e} is below the floor {floor:e}")]
    Singular { eigenvalue: f64, floor: f64 },

    #[error("degenerate scale: diagonal entry {index} equals {value:e}")]
    DegenerateScale { index: usize, value: f64 },

    #[error("degenerate marginal in column {column}: all values are identical")]
    DegenerateMarginal { column: usize },

    #[error("fitted marginal {component} is a point mass (values all equal {value})")]
    PointMassMarginal { component: usize, value: f64 },

    #[error("boundary solution: A = {a:e}, D = {d:e}; the minimizer lies at rho = +/-1")]
    BoundarySolution { a: f64, d: f64 },

    #[error("optimization failed at iteration {iteration}: {reason}")]
    Optimization { iteration: usize, reason: String },

    #[error("zero Fréchet variance in component {component}")]
    DegenerateVariance { component: String },

    #[error("predictor covariance is singular (condition number {condition:e}); set a ridge")]
    SingularPredictors { condition: f64 },

    #[error("assignment size {n} exceeds the O(N^3) guard of {limit} points")]
    GuardExceeded { n: usize, limit: usize },

    #[error("too many failed permutation replicates: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("subject {index}: {source}")]
    Subject {
        index: usize,
        #[source]
        source: Box<NptError>,
    },
}

impl NptError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        NptError::Validation(msg.into())
    }

    pub(crate) fn at_subject(self, index: usize) -> Self {
        NptError::Subject {
            index,
            source: Box::new(self),
        }
    }

    /// True for errors caused by malformed input rather than numerical breakdown.
    pub fn is_input_error(&self) -> bool {
        match self {
            NptError::Validation(_)
            | NptError::DimensionMismatch { .. }
            | NptError::DegenerateMarginal { .. }
            | NptError::GuardExceeded { .. }
            | NptError::SingularPredictors { .. } => true,
            NptError::Subject { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
