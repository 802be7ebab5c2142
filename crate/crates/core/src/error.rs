use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants split into two groups: invalid inputs (`is_validation`) and
/// numerical breakdowns. The CLI maps them onto exit codes 1 and 2.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown family kind `{0}`")]
    UnknownFamily(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mean {mean} outside the domain ({lower}, {upper})")]
    DomainViolation { mean: f64, lower: f64, upper: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },

    #[error("condition {condition} fails: {detail}")]
    ConditionFailure { condition: String, detail: String },

    #[error("compatibility fails: phi^2(3, S) = {phi_sq:e}")]
    CompatibilityFails { phi_sq: f64 },

    #[error("singular Sigma_11: smallest eigenvalue {min_eigenvalue:e}, reciprocal condition {rcond:e}")]
    SingularGram { min_eigenvalue: f64, rcond: f64 },

    #[error("coefficient norm {norm:e} exceeds cap {cap:e}; data may be separable")]
    Divergence { norm: f64, cap: f64 },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// True when the error stems from invalid user input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::UnknownFamily(_)
                | Error::ShapeMismatch(_)
                | Error::DomainViolation { .. }
                | Error::Io(_)
                | Error::Parse(_)
                | Error::DegenerateGrid(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::UnknownFamily(_) => "unknown_family",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::DomainViolation { .. } => "domain_violation",
            Error::QuadratureFailure { .. } => "quadrature_failure",
            Error::ConditionFailure { .. } => "condition_failure",
            Error::CompatibilityFails { .. } => "compatibility_fails",
            Error::SingularGram { .. } => "singular_gram",
            Error::Divergence { .. } => "divergence",
            Error::Solver(_) => "solver",
            Error::DegenerateGrid(_) => "degenerate_grid",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
