use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    /// A matrix that must be positive definite (or invertible) was not.
    #[error("singular matrix: {matrix}")]
    Singular { matrix: String },

    /// The response cannot support the requested basis f_y.
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Too few observations for the structured fit.
    #[error(
        "insufficient sample: n = {n} but the fit needs n >= {required} and a positive definite \
         sample covariance; screen predictors or reduce them beforehand"
    )]
    InsufficientSample { n: usize, required: usize },
}

impl Error {
    pub(crate) fn singular(matrix: impl Into<String>) -> Self {
        Error::Singular {
            matrix: matrix.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures that come from the numbers rather than the request.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. })
    }
}
