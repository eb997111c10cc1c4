use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a documented invariant. The string names it.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A user-supplied function returned a non-finite value.
    #[error("non-finite evaluation of {quantity} at {point}")]
    Evaluation { quantity: String, point: f64 },

    /// Root bracketing or another numerical procedure failed.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A simulation produced a non-finite state.
    #[error("numeric divergence at step {step}: {what}")]
    Divergence { step: usize, what: String },

    /// Solver configuration rejected before stepping.
    #[error("configuration error: {0}")]
    Config(String),

    /// Coefficients violate the correlation condition required for uniqueness.
    #[error(
        "correlation condition violated: |rho - xi*rho3*rho1*rho2| = {lhs} > xi*sqrt(1-rho1^2)*sqrt(1-rho2^2) = {rhs}; \
         uniqueness of the SPDE solution is not guaranteed"
    )]
    CorrelationCondition { lhs: f64, rhs: f64 },

    /// Inputs with incompatible shapes or time grids.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A quadrature grid cannot resolve the smoothing kernel.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Input with no usable content (zero mass, empty series, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Missing or malformed input data.
    #[error("input error: {0}")]
    Input(String),

    /// Operation only defined for a specific scenario family.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// A test function is not admissible for the weak formulation.
    #[error("test function error: {0}")]
    TestFunction(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
